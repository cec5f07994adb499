//! Latent-variable energies: finite mixtures with an ELBO over the simplex,
//! and the Chinese-restaurant-process extension that can grow new memories.
//!
//! Cluster indices are zero-based. For CRP models the "new table" component
//! sits last, at index `K⁺`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::energy::{ClamModel, EnergyModel, TapeEnergy};
use crate::error::check_dim;
use crate::numerics::stable::{lse_unchecked, softmax_in_place};
use crate::numerics::vec::{dot, sq_dist};
use crate::numerics::{math, Tape, Tensor, Var};
use crate::{Error, Result};

/// Gaussian mixture with isotropic likelihood exponent `−β‖μₖ − x‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    k: usize,
    d: usize,
    memories: Vec<f64>,
    beta: f64,
    mixing: Vec<f64>,
}

impl MixtureModel {
    pub fn new(k: usize, d: usize, memories: Vec<f64>, beta: f64, mixing: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::invalid("a mixture needs K >= 1 components of dimension >= 1"));
        }
        check_dim(k * d, memories.len())?;
        check_dim(k, mixing.len())?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        let s: f64 = mixing.iter().sum();
        if mixing.iter().any(|&w| !(w > 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixing weights must be positive and sum to 1"));
        }
        Ok(MixtureModel { k, d, memories, beta, mixing })
    }

    pub fn uniform(k: usize, d: usize, memories: Vec<f64>, beta: f64) -> Result<Self> {
        Self::new(k, d, memories, beta, vec![1.0 / k as f64; k])
    }

    /// The mixture whose memories, β and weights are those of `m` (uniform if unset).
    pub fn from_clam(m: &ClamModel) -> Self {
        let k = m.k();
        let mixing = m.mixing().map_or_else(|| vec![1.0 / k as f64; k], |w| w.to_vec());
        MixtureModel { k, d: m.dim(), memories: m.memories().to_vec(), beta: m.beta(), mixing }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    pub fn memory(&self, k: usize) -> &[f64] {
        &self.memories[k * self.d..(k + 1) * self.d]
    }

    /// `log πₖ − β‖μₖ − x‖²` for a single component.
    pub fn log_joint(&self, x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.d, x.len())?;
        if k >= self.k {
            return Err(Error::invalid(format!("component {k} out of range for K = {}", self.k)));
        }
        Ok(math::ln(self.mixing[k]) - self.beta * sq_dist(self.memory(k), x))
    }

    /// All `K` log-joints.
    pub fn log_joints(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, x.len())?;
        Ok(self.log_joints_unchecked(x))
    }

    fn log_joints_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|k| math::ln(self.mixing[k]) - self.beta * sq_dist(self.memory(k), x))
            .collect()
    }

    /// Cluster posterior `p(z = k | x)`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut l = self.log_joints(x)?;
        softmax_in_place(&mut l);
        Ok(l)
    }

    /// `−Σ qₖ log p(x, z=k) + Σ qₖ log qₖ`.
    pub fn elbo_energy(&self, x: &[f64], s: &LatentState) -> Result<f64> {
        check_dim(self.k, s.len())?;
        Ok(elbo_from_log_joints(&self.log_joints(x)?, &s.q()))
    }

    /// Logit-space velocity `(diag q − qqᵀ)(log p(x, z) − log q − 1)`.
    pub fn elbo_logit_rhs(&self, x: &[f64], s: &LatentState) -> Result<Vec<f64>> {
        check_dim(self.k, s.len())?;
        Ok(logit_rhs_from_log_joints(&self.log_joints(x)?, s.logits()))
    }

    /// The ELBO at fixed `x` as an energy over logits.
    pub fn logit_energy(&self, x: &[f64]) -> Result<LogitEnergy> {
        LogitEnergy::new(self.log_joints(x)?)
    }
}

/// Logits `v` of a variational distribution `q = softmax(v)` over clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    v: Vec<f64>,
}

impl LatentState {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::invalid("a latent state needs at least one component"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logits must be finite".into()));
        }
        Ok(LatentState { v })
    }

    /// State whose softmax is the strictly positive distribution `q`.
    pub fn from_probs(q: &[f64]) -> Result<Self> {
        if q.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("probabilities must be strictly positive"));
        }
        Self::new(q.iter().map(|&p| math::ln(p)).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.v
    }

    pub fn q(&self) -> Vec<f64> {
        let mut q = self.v.clone();
        softmax_in_place(&mut q);
        q
    }
}

fn log_q(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ls = math::ln(v.iter().map(|&x| math::exp(x - m)).sum());
    v.iter().map(|&x| (x - m) - ls).collect()
}

/// ELBO energy for given log-joints and `q`; zero-probability entries contribute nothing.
pub fn elbo_from_log_joints(log_joints: &[f64], q: &[f64]) -> f64 {
    log_joints
        .iter()
        .zip(q)
        .filter(|(_, &qk)| qk > 0.0)
        .map(|(&l, &qk)| qk * (math::ln(qk) - l))
        .sum()
}

/// Logit-space ELBO velocity for given log-joints at logits `v`.
pub fn logit_rhs_from_log_joints(log_joints: &[f64], v: &[f64]) -> Vec<f64> {
    let lq = log_q(v);
    let mut out: Vec<f64> = lq.iter().zip(log_joints).map(|(lqk, l)| l - lqk - 1.0).collect();
    let qb: f64 = lq.iter().zip(&out).map(|(lqk, b)| math::exp(*lqk) * b).sum();
    for (o, lqk) in out.iter_mut().zip(&lq) {
        *o = math::exp(*lqk) * (*o - qb);
    }
    out
}

/// ELBO energy over logits at a fixed data point; its negative gradient is
/// the logit-space flow.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitEnergy {
    log_joints: Vec<f64>,
    log_post: Vec<f64>,
    minimum: f64,
}

impl LogitEnergy {
    pub fn new(log_joints: Vec<f64>) -> Result<Self> {
        if log_joints.is_empty() || log_joints.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::invalid("log-joints must be non-empty and below +inf"));
        }
        let lse = lse_unchecked(&log_joints);
        let log_post = log_joints.iter().map(|l| l - lse).collect();
        Ok(LogitEnergy { log_joints, log_post, minimum: -lse })
    }

    pub fn log_joints(&self) -> &[f64] {
        &self.log_joints
    }

    /// The ELBO minimum, `−log Σₖ p(x, z=k)`.
    pub fn minimum(&self) -> f64 {
        self.minimum
    }

    pub fn posterior(&self) -> Vec<f64> {
        let mut p = self.log_joints.clone();
        softmax_in_place(&mut p);
        p
    }
}

impl EnergyModel for LogitEnergy {
    fn dim(&self) -> usize {
        self.log_joints.len()
    }

    // Evaluated as KL(q ‖ posterior) plus the minimum, so that rounding keeps
    // the order of nearby energies.
    fn energy_unchecked(&self, v: &[f64]) -> f64 {
        let lq = log_q(v);
        let kl: f64 = lq
            .iter()
            .zip(&self.log_post)
            .map(|(&a, &b)| math::exp(a) * (a - b))
            .filter(|t| !t.is_nan())
            .sum();
        kl + self.minimum
    }

    fn grad_into(&self, v: &[f64], out: &mut [f64]) {
        let r = logit_rhs_from_log_joints(&self.log_post, v);
        out.iter_mut().zip(r).for_each(|(o, ri)| *o = -ri);
    }
}

impl TapeEnergy for LogitEnergy {
    fn energy_on_tape(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        let q = tape.softmax_rows(v);
        let lq = tape.log(q);
        let l = tape.constant(Tensor::row(self.log_joints.clone()));
        let diff = tape.sub(lq, l)?;
        let e = tape.mul(q, diff)?;
        Ok(tape.sum(e))
    }
}

/// CRP conditional prior `p(z_n = k | z_1..z_{n−1})` with concentration
/// `alpha` and discount `d`. Labels are `0..K⁺`, and `k == K⁺` is a new table.
pub fn crp_prior(assignments: &[usize], alpha: f64, d: f64, k: usize) -> Result<f64> {
    check_crp_hyper(alpha, d)?;
    let counts = table_counts(assignments)?;
    let k_plus = counts.len();
    let denom = assignments.len() as f64 + alpha;
    Ok(if k < k_plus {
        (counts[k] as f64 - d) / denom
    } else if k == k_plus {
        (alpha + d * k_plus as f64) / denom
    } else {
        0.0
    })
}

fn check_crp_hyper(alpha: f64, d: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(0.0..1.0).contains(&d) {
        return Err(Error::invalid(format!("discount must lie in [0, 1), got {d}")));
    }
    Ok(())
}

/// Per-table counts; labels must cover `0..K⁺` with none skipped.
fn table_counts(assignments: &[usize]) -> Result<Vec<usize>> {
    let k_plus = assignments.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k_plus];
    for &z in assignments {
        counts[z] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::invalid("cluster labels must be contiguous"));
    }
    Ok(counts)
}

/// A CRP-weighted clustering memory: `K⁺` occupied tables with real-valued
/// counts, plus a new-table component anchored at the origin.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrpState {
    d: usize,
    alpha: f64,
    discount: f64,
    beta: f64,
    rho: f64,
    counts: Vec<f64>,
    memories: Vec<f64>,
}

impl CrpState {
    /// An empty restaurant over `R^dim`.
    pub fn new(dim: usize, alpha: f64, discount: f64, beta: f64, rho: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        check_crp_hyper(alpha, discount)?;
        for (name, v) in [("beta", beta), ("rho", rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(CrpState { d: dim, alpha, discount, beta, rho, counts: Vec::new(), memories: Vec::new() })
    }

    /// Replace the occupied tables; each count must exceed the discount.
    pub fn with_clusters(mut self, memories: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        check_dim(counts.len() * self.d, memories.len())?;
        if counts.iter().any(|&c| !(c > self.discount) || !c.is_finite()) {
            return Err(Error::invalid("every count must exceed the discount"));
        }
        if memories.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("memories must be finite".into()));
        }
        self.counts = counts;
        self.memories = memories;
        Ok(self)
    }

    pub fn k_plus(&self) -> usize {
        self.counts.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn memories(&self) -> &[f64] {
        &self.memories
    }

    pub fn memory(&self, k: usize) -> &[f64] {
        &self.memories[k * self.d..(k + 1) * self.d]
    }

    /// Precision `(β⁻¹ + ρ⁻¹)⁻¹` of the new-table exponent.
    pub fn new_table_precision(&self) -> f64 {
        self.beta * self.rho / (self.beta + self.rho)
    }

    fn new_table_weight(&self) -> f64 {
        self.alpha + self.discount * self.k_plus() as f64
    }

    /// `K⁺ + 1` log-joints; the new-table term is last.
    pub fn log_joints(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, x.len())?;
        Ok(self.log_joints_unchecked(x))
    }

    fn log_joints_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut l: Vec<f64> = (0..self.k_plus())
            .map(|k| math::ln(self.counts[k] - self.discount) - self.beta * sq_dist(self.memory(k), x))
            .collect();
        l.push(math::ln(self.new_table_weight()) - self.new_table_precision() * dot(x, x));
        l
    }

    /// Posterior over the `K⁺ + 1` components.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut l = self.log_joints(x)?;
        softmax_in_place(&mut l);
        Ok(l)
    }

    /// ELBO energy over the `K⁺ + 1` components.
    pub fn elbo_energy(&self, x: &[f64], s: &LatentState) -> Result<f64> {
        check_dim(self.k_plus() + 1, s.len())?;
        Ok(elbo_from_log_joints(&self.log_joints(x)?, &s.q()))
    }

    pub fn elbo_logit_rhs(&self, x: &[f64], s: &LatentState) -> Result<Vec<f64>> {
        check_dim(self.k_plus() + 1, s.len())?;
        Ok(logit_rhs_from_log_joints(&self.log_joints(x)?, s.logits()))
    }

    pub fn logit_energy(&self, x: &[f64]) -> Result<LogitEnergy> {
        LogitEnergy::new(self.log_joints(x)?)
    }

    /// True when the new-table component has the largest posterior weight at `x`.
    pub fn prefers_new_table(&self, x: &[f64]) -> Result<bool> {
        let l = self.log_joints(x)?;
        Ok(crate::numerics::vec::argmax(&l) == self.k_plus())
    }

    /// Open a new table at the shrunk point `β/(β+ρ) · x` with count 1.
    pub fn create_memory(&self, x: &[f64]) -> Result<CrpState> {
        check_dim(self.d, x.len())?;
        let shrink = self.beta / (self.beta + self.rho);
        let mut next = self.clone();
        next.memories.extend(x.iter().map(|&xi| shrink * xi));
        next.counts.push(1.0);
        Ok(next)
    }

    /// Add `weight` to table `k`'s count.
    pub fn observe(&self, k: usize, weight: f64) -> Result<CrpState> {
        if k >= self.k_plus() {
            return Err(Error::invalid(format!("table {k} does not exist")));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid("weight must be nonnegative"));
        }
        let mut next = self.clone();
        next.counts[k] += weight;
        Ok(next)
    }
}

impl EnergyModel for CrpState {
    fn dim(&self) -> usize {
        self.d
    }

    /// `−β⁻¹ log( e^{−c‖x‖²}(α + K⁺d) + Σₖ e^{−β‖μₖ−x‖²}(π̃ₖ − d) )`.
    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        -lse_unchecked(&self.log_joints_unchecked(x)) / self.beta
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let mut w = self.log_joints_unchecked(x);
        softmax_in_place(&mut w);
        let k_plus = self.k_plus();
        let c = self.new_table_precision();
        for (i, o) in out.iter_mut().enumerate() {
            let mut g = w[k_plus] * 2.0 * c * x[i];
            for k in 0..k_plus {
                g += w[k] * 2.0 * self.beta * (x[i] - self.memory(k)[i]);
            }
            *o = g / self.beta;
        }
    }
}

impl TapeEnergy for CrpState {
    fn energy_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xx = tape.mul(x, x)?;
        let xx = tape.sum(xx);
        let new = tape.scale(xx, -self.new_table_precision());
        let lw = tape.constant(Tensor::scalar(math::ln(self.new_table_weight())));
        let new = tape.add(new, lw)?;
        let scores = if self.k_plus() == 0 {
            new
        } else {
            let mu = tape.constant(Tensor::matrix(self.k_plus(), self.d, self.memories.clone())?);
            let d = tape.sq_dist(x, mu)?;
            let s = tape.scale(d, -self.beta);
            let lc = Tensor::row(self.counts.iter().map(|c| math::ln(c - self.discount)).collect());
            let lc = tape.constant(lc);
            let s = tape.add_row(s, lc)?;
            tape.concat_cols(&[s, new])?
        };
        let l = tape.log_sum_exp_rows(scores);
        Ok(tape.scale(l, -1.0 / self.beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::tape_gradient;
    use crate::numerics::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_mixture(rng: &mut Rng, k: usize, d: usize, beta: f64) -> MixtureModel {
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 0.1).collect();
        let s: f64 = raw.iter().sum();
        MixtureModel::new(k, d, rng.normal_vec(k * d), beta, raw.iter().map(|r| r / s).collect()).unwrap()
    }

    #[test]
    fn log_joint_examples() {
        let m = MixtureModel::uniform(3, 2, vec![0.0, 0.0, 1.0, 1.0, -2.0, 0.5], 1.3).unwrap();
        assert!(close(m.log_joint(&[1.0, 1.0], 1).unwrap(), (1.0f64 / 3.0).ln(), 1e-15));
        assert!(m.log_joint(&[1.0, 1.0], 3).is_err());
        let one = MixtureModel::uniform(1, 2, vec![0.5, -0.5], 2.0).unwrap();
        assert!(close(one.log_joint(&[1.0, 0.0], 0).unwrap(), -2.0 * 0.5, 1e-15));
    }

    #[test]
    fn log_joints_against_naive_sum_and_clam() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let m = random_mixture(&mut rng, 4, 3, 0.6);
            let x = rng.normal_vec(3);
            let l = m.log_joints(&x).unwrap();
            let naive: f64 = (0..4)
                .map(|k| m.mixing()[k] * (-m.beta() * sq_dist(m.memory(k), &x)).exp())
                .sum();
            assert!(close(lse_unchecked(&l).exp(), naive, 1e-12));
        }
        let clam = ClamModel::new(2, 1, vec![0.0, 1.0], 1.5).unwrap();
        let m = MixtureModel::from_clam(&clam);
        let x = [0.3];
        let lhs = lse_unchecked(&m.log_joints(&x).unwrap());
        let rhs = -1.5 * clam.energy(&x).unwrap() - 2f64.ln();
        assert!(close(lhs, rhs, 1e-14));
    }

    #[test]
    fn posterior_examples() {
        let m = MixtureModel::uniform(2, 1, vec![-1.0, 1.0], 1.0).unwrap();
        let p = m.posterior(&[0.0]).unwrap();
        assert!(close(p[0], 0.5, 1e-15) && close(p[1], 0.5, 1e-15));
        let hot = MixtureModel::uniform(2, 1, vec![0.0, 1.0], 100.0).unwrap();
        // gap β(‖μ₀−x‖² − ‖μ₁−x‖²) = 100·0.64 − 100·0.04 = 60 > 20
        let p = hot.posterior(&[0.8]).unwrap();
        assert!(close(p[1], 1.0, 1e-6));
    }

    #[test]
    fn elbo_examples() {
        let mut rng = Rng::new(4);
        let m = random_mixture(&mut rng, 3, 2, 0.9);
        let x = rng.normal_vec(2);
        let l = m.log_joints(&x).unwrap();
        let onehot = LatentState::new(vec![0.0, -800.0, -800.0]).unwrap();
        assert!(close(m.elbo_energy(&x, &onehot).unwrap(), -l[0], 1e-12));
        let post = LatentState::from_probs(&m.posterior(&x).unwrap()).unwrap();
        assert!(close(m.elbo_energy(&x, &post).unwrap(), -lse_unchecked(&l), 1e-10));

        let sym = MixtureModel::uniform(2, 1, vec![-1.0, 1.0], 1.0).unwrap();
        let xs = [0.25];
        let ls = sym.log_joints(&xs).unwrap();
        let uni = LatentState::uniform(2).unwrap();
        let expect = -0.5 * (ls[0] + ls[1]) - 2f64.ln();
        assert!(close(sym.elbo_energy(&xs, &uni).unwrap(), expect, 1e-14));
    }

    #[test]
    fn logit_rhs_examples() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let m = random_mixture(&mut rng, 4, 2, 1.1);
            let x = rng.normal_vec(2);
            let s = LatentState::new(rng.normal_vec(4)).unwrap();
            let r = m.elbo_logit_rhs(&x, &s).unwrap();
            assert!(r.iter().sum::<f64>().abs() < 1e-14);
            let e = m.logit_energy(&x).unwrap();
            let g = tape_gradient(&e, s.logits()).unwrap();
            for (ri, gi) in r.iter().zip(&g) {
                assert!(close(*ri, -gi, 1e-10));
            }
            let ints = LatentState::new((0..4).map(|_| rng.below(7) as f64 - 3.0).collect()).unwrap();
            let shifted: Vec<f64> = ints.logits().iter().map(|v| v + 5.0).collect();
            let r1 = m.elbo_logit_rhs(&x, &ints).unwrap();
            let r2 = m.elbo_logit_rhs(&x, &LatentState::new(shifted).unwrap()).unwrap();
            assert_eq!(r1, r2);
        }
        let m = random_mixture(&mut rng, 3, 2, 1.0);
        let x = rng.normal_vec(2);
        let at_post = LatentState::from_probs(&m.posterior(&x).unwrap()).unwrap();
        assert!(m.elbo_logit_rhs(&x, &at_post).unwrap().iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn crp_prior_examples() {
        assert_eq!(crp_prior(&[], 0.7, 0.3, 0).unwrap(), 1.0);
        assert_eq!(crp_prior(&[0], 1.0, 0.0, 0).unwrap(), 0.5);
        assert_eq!(crp_prior(&[0], 1.0, 0.0, 1).unwrap(), 0.5);
        let h = [0, 0, 1];
        let p: Vec<f64> = (0..4).map(|k| crp_prior(&h, 0.5, 0.25, k).unwrap()).collect();
        assert!(close(p[0], 0.5, 1e-15));
        assert!(close(p[1], 0.75 / 3.5, 1e-15));
        assert!(close(p[2], 1.0 / 3.5, 1e-15));
        assert_eq!(p[3], 0.0);
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-15));
        assert!(crp_prior(&[0, 2], 1.0, 0.0, 0).is_err());
    }

    fn state(alpha: f64, d: f64) -> CrpState {
        CrpState::new(2, alpha, d, 2.0, 0.5)
            .unwrap()
            .with_clusters(vec![3.0, 0.0, -2.0, 2.5], vec![4.0, 2.0])
            .unwrap()
    }

    #[test]
    fn crp_energy_examples() {
        let empty = CrpState::new(2, 0.3, 0.0, 2.0, 1.0).unwrap();
        assert!(close(empty.energy(&[0.0, 0.0]).unwrap(), -(0.3f64.ln()) / 2.0, 1e-15));

        let s = state(1.0, 0.1);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..40 {
            let r = 8.0 + i as f64;
            let e = s.energy(&[r * 0.6, r * 0.8]).unwrap();
            assert!(e > prev);
            prev = e;
        }
        let x = [0.2, -0.1];
        assert!(state(5.0, 0.1).energy(&x).unwrap() < state(0.5, 0.1).energy(&x).unwrap());
    }

    #[test]
    fn crp_gradient_matches_tape() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let s = state(rng.uniform() + 0.1, 0.3 * rng.uniform());
            let x = rng.normal_vec(2);
            let a = s.gradient(&x).unwrap();
            let t = tape_gradient(&s, &x).unwrap();
            for (ai, ti) in a.iter().zip(&t) {
                assert!(close(*ai, *ti, 1e-10 * ai.abs().max(1.0)));
            }
        }
        let empty = CrpState::new(2, 0.3, 0.0, 2.0, 1.0).unwrap();
        let g = tape_gradient(&empty, &[0.5, 1.0]).unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn crp_elbo_tightness() {
        let s = state(1.0, 0.2);
        let x = [1.0, 1.0];
        let post = LatentState::from_probs(&s.posterior(&x).unwrap()).unwrap();
        let e = s.elbo_energy(&x, &post).unwrap();
        assert!(close(e, s.beta() * s.energy(&x).unwrap(), 1e-10));
        let origin = [0.0, 0.0];
        let new_hot = LatentState::new(vec![-900.0, -900.0, 0.0]).unwrap();
        assert!(close(s.elbo_energy(&origin, &new_hot).unwrap(), -(1.0f64 + 2.0 * 0.2).ln(), 1e-12));
        assert!(s.elbo_energy(&x, &LatentState::uniform(2).unwrap()).is_err());
    }

    #[test]
    fn create_memory_shrinkage() {
        let x = [2.0, -4.0];
        let tight = CrpState::new(2, 1.0, 0.0, 1.0, 1e9).unwrap().create_memory(&x).unwrap();
        assert!(tight.memory(0).iter().all(|m| m.abs() < 1e-8));
        let loose = CrpState::new(2, 1.0, 0.0, 1.0, 1e-9).unwrap().create_memory(&x).unwrap();
        assert!(close(loose.memory(0)[0], 2.0, 1e-8) && close(loose.memory(0)[1], -4.0, 1e-8));
        let half = CrpState::new(2, 1.0, 0.0, 0.7, 0.7).unwrap().create_memory(&x).unwrap();
        assert_eq!(half.memory(0), &[1.0, -2.0]);
        assert_eq!(half.counts(), &[1.0]);
        assert_eq!(half.k_plus(), 1);
    }

    #[test]
    fn invalid_crp_states_rejected() {
        assert!(CrpState::new(2, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(CrpState::new(2, 1.0, 1.0, 1.0, 1.0).is_err());
        let s = CrpState::new(1, 1.0, 0.5, 1.0, 1.0).unwrap();
        assert!(s.clone().with_clusters(vec![0.0], vec![0.5]).is_err());
        assert!(s.with_clusters(vec![0.0], vec![0.6]).is_ok());
    }
}
