//! Conditional energies, sampling, energy grids and held-out evaluation.

use alloc::vec;
use alloc::vec::Vec;

use super::model::{CacheValues, IclEbmModel};
use super::task::{make_task_with, TaskConfig};
use crate::dynamics::{langevin_with_rng, Record, SamplerConfig};
use crate::energy::EnergyModel;
use crate::numerics::{Rng, Tensor};
use crate::{Error, Result};

/// Per-position energies `E(x_{n+1} | x_1..x_n)` for `n = 1..L−1`.
pub fn icl_energy(model: &IclEbmModel, sequence: &Tensor) -> Result<Vec<f64>> {
    if sequence.rows() < 2 {
        return Err(Error::invalid(format_len(sequence.rows())));
    }
    let mut e = model.all_energies(sequence)?;
    e.remove(0);
    Ok(e)
}

fn format_len(l: usize) -> alloc::string::String {
    alloc::format!("sequence length must be at least 2, got {l}")
}

/// `E(· | context)` as an energy on query points.
#[derive(Clone, Debug)]
pub struct ConditionalEnergy<'a> {
    model: &'a IclEbmModel,
    cache: CacheValues,
    position: usize,
}

impl<'a> ConditionalEnergy<'a> {
    /// Condition on a non-empty `n × d_in` context; queries sit at position `n`.
    pub fn new(model: &'a IclEbmModel, context: &Tensor) -> Result<Self> {
        let n = context.rows();
        if n == 0 {
            return Err(Error::invalid(format_len(1)));
        }
        if context.cols() != model.config().d_in {
            return Err(Error::DimensionMismatch { expected: model.config().d_in, got: context.cols() });
        }
        if !context.is_finite() {
            return Err(Error::NonFinite("context must be finite".into()));
        }
        // The query slot needs a row in the cache. Its content never reaches
        // the query, which attends to itself through its own key and value.
        let mut data = context.data().to_vec();
        data.extend(core::iter::repeat_n(0.0, context.cols()));
        let padded = Tensor::matrix(n + 1, context.cols(), data)?;
        let cache = model.prefix_cache(&padded)?;
        Ok(ConditionalEnergy { model, cache, position: n })
    }

    pub fn context_len(&self) -> usize {
        self.position
    }

    /// Energies of the rows of an `M × d_in` query matrix.
    pub fn energies(&self, queries: &Tensor) -> Result<Vec<f64>> {
        self.check(queries)?;
        let rows = vec![self.position; queries.rows()];
        Ok(self.model.candidate_energies(&self.cache, queries, &rows, false)?.0)
    }

    /// Energies and their gradients with respect to the queries.
    pub fn energies_and_grads(&self, queries: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        self.check(queries)?;
        let rows = vec![self.position; queries.rows()];
        let (e, g) = self.model.candidate_energies(&self.cache, queries, &rows, true)?;
        Ok((e, g.expect("gradient requested")))
    }

    fn check(&self, queries: &Tensor) -> Result<()> {
        if queries.cols() != self.model.config().d_in {
            return Err(Error::DimensionMismatch { expected: self.model.config().d_in, got: queries.cols() });
        }
        Ok(())
    }
}

impl EnergyModel for ConditionalEnergy<'_> {
    fn dim(&self) -> usize {
        self.model.config().d_in
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        let q = Tensor::row(x.to_vec());
        self.energies(&q).map_or(f64::NAN, |e| e[0])
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let q = Tensor::row(x.to_vec());
        match self.energies_and_grads(&q) {
            Ok((_, g)) => out.copy_from_slice(g.data()),
            Err(_) => out.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IclSampleConfig {
    pub sampler: SamplerConfig,
    /// The chain starts uniform on `[-box_half_width, box_half_width]^D`.
    pub box_half_width: f64,
}

impl Default for IclSampleConfig {
    fn default() -> Self {
        IclSampleConfig { sampler: SamplerConfig { step: 3.16, noise: 0.01, steps: 15, seed: 0 }, box_half_width: 3.0 }
    }
}

/// One Langevin chain on `E(· | context)` from a uniform start.
pub fn icl_sample(model: &IclEbmModel, context: &Tensor, cfg: &IclSampleConfig) -> Result<Vec<f64>> {
    if !(cfg.box_half_width > 0.0 && cfg.box_half_width.is_finite()) {
        return Err(Error::invalid("box_half_width must be positive"));
    }
    let cond = ConditionalEnergy::new(model, context)?;
    let mut rng = Rng::new(cfg.sampler.seed);
    let b = cfg.box_half_width;
    let x0 = rng.uniform_vec(model.config().d_in, -b, b);
    let t = langevin_with_rng(&cond, &x0, &cfg.sampler, &mut rng, Record::Endpoints)?;
    Ok(t.last().to_vec())
}

/// A regular `nx × ny` grid over a rectangle, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { x_min: -3.0, x_max: 3.0, y_min: -3.0, y_max: 3.0, nx: 61, ny: 61 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(self.x_min, self.x_max) || !ok(self.y_min, self.y_max) {
            return Err(Error::invalid("grid bounds must be finite with min < max"));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid("grid needs at least 2 points per axis"));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.ny)
    }

    /// All grid points, `x` varying fastest.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let xs = self.xs();
        self.ys().into_iter().flat_map(|y| xs.iter().map(move |&x| [x, y])).collect()
    }
}

/// Energies on a grid, row-major with `x` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub energies: Vec<f64>,
}

impl EnergyGrid {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.energies[iy * self.xs.len() + ix]
    }

    /// Grid point with the lowest energy.
    pub fn argmin(&self) -> [f64; 2] {
        let i = crate::numerics::vec::argmin(&self.energies);
        [self.xs[i % self.xs.len()], self.ys[i / self.xs.len()]]
    }
}

/// Energy field for a 2-D model, evaluated on any function of a point.
pub fn grid_of(spec: &GridSpec, mut f: impl FnMut(&[[f64; 2]]) -> Result<Vec<f64>>) -> Result<EnergyGrid> {
    spec.validate()?;
    let energies = f(&spec.points())?;
    Ok(EnergyGrid { xs: spec.xs(), ys: spec.ys(), energies })
}

/// `E(· | context)` on a grid.
pub fn energy_grid(model: &IclEbmModel, context: &Tensor, spec: &GridSpec) -> Result<EnergyGrid> {
    if model.config().d_in != 2 {
        return Err(Error::invalid("energy grids need a 2-D model"));
    }
    let cond = ConditionalEnergy::new(model, context)?;
    grid_of(spec, |pts| {
        let data = pts.iter().flat_map(|p| p.iter().copied()).collect();
        cond.energies(&Tensor::matrix(pts.len(), 2, data)?)
    })
}

/// Held-out energies for a set of tasks: per task, real continuation points
/// and uniform points from the box, both conditioned on the same context.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGap {
    pub context_len: usize,
    /// `real[t]` and `uniform[t]` hold the energies for task `t`.
    pub real: Vec<Vec<f64>>,
    pub uniform: Vec<Vec<f64>>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Central bootstrap interval of a statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Percentile bootstrap of the mean of `values`.
pub fn bootstrap_mean(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<BootstrapInterval> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap of no values"));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::invalid("level must lie in (0, 1) and resamples be positive"));
    }
    let mut rng = Rng::new(seed);
    let n = values.len();
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| values[rng.below(n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64) + 0.5) as usize];
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapInterval { estimate: mean(values), lower: q(tail), upper: q(1.0 - tail), level })
}

impl EnergyGap {
    /// Per-task gaps `mean E(uniform) − mean E(real)`.
    pub fn task_gaps(&self) -> Vec<f64> {
        self.real.iter().zip(&self.uniform).map(|(r, u)| mean(u) - mean(r)).collect()
    }

    pub fn gap(&self) -> f64 {
        mean(&self.task_gaps())
    }

    pub fn mean_real(&self) -> f64 {
        mean(&self.real.iter().map(|r| mean(r)).collect::<Vec<_>>())
    }

    pub fn mean_uniform(&self) -> f64 {
        mean(&self.uniform.iter().map(|u| mean(u)).collect::<Vec<_>>())
    }

    /// Bootstrap over tasks of the mean gap.
    pub fn bootstrap(&self, level: f64, resamples: usize, seed: u64) -> Result<BootstrapInterval> {
        bootstrap_mean(&self.task_gaps(), level, resamples, seed)
    }
}

/// Held-out evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GapConfig {
    pub tasks: usize,
    pub queries_per_task: usize,
    pub box_half_width: f64,
    pub task: TaskConfig,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig { tasks: 200, queries_per_task: 32, box_half_width: 3.0, task: TaskConfig::default(), seed: 1 }
    }
}

/// Energies of held-out real points and uniform points after a context of
/// `context_len` draws. Task `t` uses generator stream `t`, so calls with
/// different context lengths see the same tasks.
pub fn energy_gap(model: &IclEbmModel, context_len: usize, cfg: &GapConfig) -> Result<EnergyGap> {
    if cfg.tasks == 0 || cfg.queries_per_task == 0 {
        return Err(Error::invalid("tasks and queries_per_task must be positive"));
    }
    let d = model.config().d_in;
    if cfg.task.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: cfg.task.dim });
    }
    let b = cfg.box_half_width;
    let mut real = Vec::with_capacity(cfg.tasks);
    let mut uniform = Vec::with_capacity(cfg.tasks);
    for t in 0..cfg.tasks {
        let mut rng = Rng::for_stream(cfg.seed, t as u64);
        let task = make_task_with(&cfg.task, rand::RngCore::next_u64(&mut rng))?;
        let mut qrng = Rng::for_stream(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, t as u64);
        let context = task.sample_sequence(context_len, &mut rng);
        let cond = ConditionalEnergy::new(model, &context)?;
        let held_out = task.sample_sequence(cfg.queries_per_task, &mut qrng);
        let unif = Tensor::matrix(cfg.queries_per_task, d, qrng.uniform_vec(cfg.queries_per_task * d, -b, b))?;
        real.push(cond.energies(&held_out)?);
        uniform.push(cond.energies(&unif)?);
    }
    Ok(EnergyGap { context_len, real, uniform })
}
