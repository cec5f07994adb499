//! Integrators and samplers over any [`EnergyModel`].
//!
//! Gradient flow `dx/dt = −∇E(x)` is discretized by explicit Euler steps,
//! optionally with step halving whenever the energy would rise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::energy::{EnergyModel, Mchn, PatternSet};
use crate::error::check_dim;
use crate::latent::{CrpState, LatentState, LogitEnergy, MixtureModel};
use crate::numerics::vec::{all_finite, norm_inf};
use crate::numerics::Rng;
use crate::{Error, Result};

/// How much of a run to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Record {
    /// Every accepted state.
    #[default]
    All,
    /// Only the first and last states.
    Endpoints,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FlowConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Stop once `‖Δx‖∞ ≤ tol`.
    pub tol: f64,
    pub backtracking: bool,
    pub record: Record,
    /// With backtracking, double the step after every accepted step, up to
    /// this size. `None` keeps the step at `dt`.
    pub max_dt: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { dt: 0.1, max_steps: 10_000, tol: 1e-8, backtracking: true, record: Record::All, max_dt: None }
    }
}

/// Maximum number of step halvings per Euler step.
pub const MAX_HALVINGS: u32 = 30;

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        if let Some(m) = self.max_dt {
            if !(m >= self.dt && m.is_finite()) {
                return Err(Error::invalid(format!("max_dt must be finite and at least dt, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SamplerConfig {
    /// Gradient step size.
    pub step: f64,
    /// Standard deviation of the injected Gaussian noise.
    pub noise: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { step: 0.01, noise: 0.01, steps: 100, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise must be nonnegative, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Termination {
    /// The state change fell below the tolerance.
    Converged,
    /// The step budget ran out.
    MaxSteps,
    /// Every halved step still raised the energy.
    Stalled,
    /// The gradient or state became non-finite; the trajectory stops at the last finite state.
    NonFinite,
}

/// States, energies and step indices of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub steps: Vec<usize>,
    pub termination: Termination,
}

impl Trajectory {
    fn start(x0: &[f64], e0: f64) -> Self {
        Trajectory {
            states: vec![x0.to_vec()],
            energies: vec![e0],
            steps: vec![0],
            termination: Termination::MaxSteps,
        }
    }

    fn push(&mut self, record: Record, step: usize, x: &[f64], e: f64) {
        if record == Record::Endpoints && self.states.len() == 2 {
            self.states.pop();
            self.energies.pop();
            self.steps.pop();
        }
        self.states.push(x.to_vec());
        self.energies.push(e);
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectories hold at least the start")
    }

    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("non-empty")
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Number of steps taken.
    pub fn step_count(&self) -> usize {
        *self.steps.last().expect("non-empty")
    }
}

/// Euler gradient descent `x ← x − dt·∇E(x)` from `x0`.
pub fn integrate<E: EnergyModel + ?Sized>(model: &E, x0: &[f64], cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim(model.dim(), x0.len())?;
    let mut x = x0.to_vec();
    let mut e = model.energy_unchecked(&x);
    let mut traj = Trajectory::start(x0, e);
    let mut g = vec![0.0; x.len()];
    let mut cand = vec![0.0; x.len()];
    let mut h = cfg.dt;
    for step in 1..=cfg.max_steps {
        model.grad_into(&x, &mut g);
        if !all_finite(&g) {
            traj.termination = Termination::NonFinite;
            return Ok(traj);
        }
        if h * norm_inf(&g) <= cfg.tol {
            traj.termination = Termination::Converged;
            return Ok(traj);
        }
        let mut dt = h;
        let mut accepted = false;
        let mut e_new = e;
        for _ in 0..=MAX_HALVINGS {
            for ((c, &xi), &gi) in cand.iter_mut().zip(&x).zip(&g) {
                *c = xi - dt * gi;
            }
            e_new = model.energy_unchecked(&cand);
            if !cfg.backtracking || e_new <= e {
                accepted = true;
                break;
            }
            dt *= 0.5;
        }
        if !accepted {
            traj.termination = Termination::Stalled;
            return Ok(traj);
        }
        if !all_finite(&cand) || e_new.is_nan() {
            traj.termination = Termination::NonFinite;
            return Ok(traj);
        }
        core::mem::swap(&mut x, &mut cand);
        e = e_new;
        traj.push(cfg.record, step, &x, e);
        if let (true, Some(m)) = (cfg.backtracking, cfg.max_dt) {
            h = (2.0 * dt).min(m);
        }
    }
    traj.termination = Termination::MaxSteps;
    Ok(traj)
}

/// Models with a per-point ELBO over their latent components.
pub trait LatentModel {
    fn logit_energy(&self, x: &[f64]) -> Result<LogitEnergy>;
}

impl LatentModel for MixtureModel {
    fn logit_energy(&self, x: &[f64]) -> Result<LogitEnergy> {
        MixtureModel::logit_energy(self, x)
    }
}

impl LatentModel for CrpState {
    fn logit_energy(&self, x: &[f64]) -> Result<LogitEnergy> {
        CrpState::logit_energy(self, x)
    }
}

/// Euler flow of the logits `v` under the ELBO at data point `x`.
pub fn integrate_logits<M: LatentModel + ?Sized>(
    model: &M,
    x: &[f64],
    v0: &LatentState,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    let e = model.logit_energy(x)?;
    integrate(&e, v0.logits(), cfg)
}

/// One concave-convex step `X softmax(β Xᵀx)`.
pub fn cccp_update(patterns: &PatternSet, beta: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(patterns.dim(), x.len())?;
    let m = Mchn::new(patterns.clone(), beta)?;
    Ok(cccp_step(&m, x))
}

fn cccp_step(m: &Mchn, x: &[f64]) -> Vec<f64> {
    let w = m.weights(x);
    let mut out = vec![0.0; x.len()];
    for (p, wi) in m.patterns().iter().zip(w) {
        out.iter_mut().zip(p).for_each(|(o, &pi)| *o += wi * pi);
    }
    out
}

/// Iterate [`cccp_update`] until `‖Δx‖∞ < tol`; returns the final point,
/// iteration count and whether the tolerance was met.
pub fn cccp_iterate(
    patterns: &PatternSet,
    beta: f64,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, bool)> {
    check_dim(patterns.dim(), x0.len())?;
    let m = Mchn::new(patterns.clone(), beta)?;
    let mut x = x0.to_vec();
    for i in 1..=max_iter {
        let next = cccp_step(&m, &x);
        let delta = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if delta < tol {
            return Ok((x, i, true));
        }
    }
    Ok((x, max_iter, false))
}

/// Unadjusted Langevin sampling: exactly `cfg.steps` updates
/// `x ← x − step·∇E(x) + ω`, `ω ~ N(0, noise²I)`.
pub fn langevin<E: EnergyModel + ?Sized>(model: &E, x0: &[f64], cfg: &SamplerConfig) -> Result<Trajectory> {
    let mut rng = Rng::new(cfg.seed);
    langevin_with_rng(model, x0, cfg, &mut rng, Record::All)
}

/// [`langevin`] drawing noise from a caller-owned generator.
pub fn langevin_with_rng<E: EnergyModel + ?Sized>(
    model: &E,
    x0: &[f64],
    cfg: &SamplerConfig,
    rng: &mut Rng,
    record: Record,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim(model.dim(), x0.len())?;
    let mut x = x0.to_vec();
    let mut traj = Trajectory::start(x0, model.energy_unchecked(&x));
    let mut g = vec![0.0; x.len()];
    for step in 1..=cfg.steps {
        model.grad_into(&x, &mut g);
        if !all_finite(&g) {
            traj.termination = Termination::NonFinite;
            return Ok(traj);
        }
        for (xi, &gi) in x.iter_mut().zip(&g) {
            *xi -= cfg.step * gi;
        }
        if cfg.noise > 0.0 {
            for xi in x.iter_mut() {
                *xi += cfg.noise * rng.normal();
            }
        }
        if !all_finite(&x) {
            traj.termination = Termination::NonFinite;
            return Ok(traj);
        }
        traj.push(record, step, &x, model.energy_unchecked(&x));
    }
    traj.termination = Termination::MaxSteps;
    Ok(traj)
}

/// Run the flow and return the final state and whether it converged.
pub fn find_fixed_point<E: EnergyModel + ?Sized>(
    model: &E,
    x0: &[f64],
    cfg: &FlowConfig,
) -> Result<(Vec<f64>, bool)> {
    let cfg = FlowConfig { record: Record::Endpoints, ..*cfg };
    let t = integrate(model, x0, &cfg)?;
    Ok((t.last().to_vec(), t.converged()))
}

/// `‖a − b‖∞`.
pub fn state_change(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_inf(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::ClamModel;

    struct Quadratic(usize);

    impl EnergyModel for Quadratic {
        fn dim(&self) -> usize {
            self.0
        }
        fn energy_unchecked(&self, x: &[f64]) -> f64 {
            0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
        fn grad_into(&self, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(x);
        }
    }

    #[test]
    fn minimum_start_gives_single_state() {
        let t = integrate(&Quadratic(3), &[0.0; 3], &FlowConfig::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.converged());
    }

    #[test]
    fn quadratic_halves_exactly() {
        let cfg = FlowConfig { dt: 0.5, max_steps: 20, tol: 0.0, ..Default::default() };
        let x0 = [3.0, -1.5];
        let t = integrate(&Quadratic(2), &x0, &cfg).unwrap();
        for (i, s) in t.states.iter().enumerate() {
            let f = 0.5f64.powi(i as i32);
            assert_eq!(s, &[x0[0] * f, x0[1] * f]);
        }
    }

    #[test]
    fn single_memory_attracts_everything() {
        let m = ClamModel::from_rows(&[vec![1.0, -2.0]], 1.0).unwrap();
        let mut rng = Rng::new(1);
        for _ in 0..10 {
            let x0: Vec<f64> = rng.normal_vec(2).iter().map(|v| 5.0 * v).collect();
            let (x, ok) = find_fixed_point(&m, &x0, &FlowConfig::default()).unwrap();
            assert!(ok);
            assert!((x[0] - 1.0).abs() < 1e-7 && (x[1] + 2.0).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_noise_langevin_matches_flow_bitwise() {
        let m = ClamModel::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.5]], 2.0).unwrap();
        let x0 = [0.3, 0.9];
        let flow = FlowConfig { dt: 0.05, max_steps: 200, tol: 0.0, backtracking: false, ..Default::default() };
        let a = integrate(&m, &x0, &flow).unwrap();
        let s = SamplerConfig { step: 0.05, noise: 0.0, steps: 200, seed: 3 };
        let b = langevin(&m, &x0, &s).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.energies, b.energies);
    }

    #[test]
    fn langevin_is_deterministic() {
        let s = SamplerConfig { step: 0.1, noise: 0.3, steps: 500, seed: 42 };
        let a = langevin(&Quadratic(2), &[1.0, 1.0], &s).unwrap();
        let b = langevin(&Quadratic(2), &[1.0, 1.0], &s).unwrap();
        assert_eq!(a.states, b.states);
        let c = langevin(&Quadratic(2), &[1.0, 1.0], &SamplerConfig { seed: 43, ..s }).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn cccp_single_pattern() {
        let p = PatternSet::from_rows(&[vec![0.2, 0.7]]).unwrap();
        assert_eq!(cccp_update(&p, 3.0, &[-5.0, 9.0]).unwrap(), [0.2, 0.7]);
    }

    #[test]
    fn saddle_with_zero_gradient_counts_as_converged() {
        let m = ClamModel::from_rows(&[vec![1.0], vec![-1.0]], 1.0).unwrap();
        let (x, ok) = find_fixed_point(&m, &[0.0], &FlowConfig::default()).unwrap();
        assert!(ok);
        assert_eq!(x, [0.0]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = FlowConfig { dt: 0.0, ..Default::default() };
        assert!(integrate(&Quadratic(1), &[1.0], &bad).is_err());
        let bad = FlowConfig { max_steps: 0, ..Default::default() };
        assert!(integrate(&Quadratic(1), &[1.0], &bad).is_err());
        assert!(integrate(&Quadratic(2), &[1.0], &FlowConfig::default()).is_err());
    }
}
