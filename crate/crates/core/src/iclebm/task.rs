//! Synthetic in-context tasks: each sequence is drawn i.i.d. from its own
//! mixture of isotropic Gaussians.

use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::numerics::{math, vec, Rng, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TaskConfig {
    pub dim: usize,
    pub components: usize,
    /// Component means are uniform on `[-mean_half_width, mean_half_width]^dim`.
    pub mean_half_width: f64,
    /// Per-coordinate standard deviation of every component.
    pub std: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig { dim: 2, components: 3, mean_half_width: 2.0, std: 0.25 }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.components == 0 {
            return Err(Error::invalid("dim and components must be positive"));
        }
        if !(self.mean_half_width >= 0.0 && self.mean_half_width.is_finite()) {
            return Err(Error::invalid("mean_half_width must be nonnegative"));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::invalid(format!("std must be positive, got {}", self.std)));
        }
        Ok(())
    }
}

/// Equal-weight mixture of `N(μₖ, std²·I)` components.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureTask {
    means: Vec<Vec<f64>>,
    std: f64,
}

impl GaussianMixtureTask {
    pub fn new(means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let d = means.first().map(Vec::len).ok_or_else(|| Error::invalid("no components"))?;
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("component means must share a positive dimension"));
        }
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::invalid("std must be positive"));
        }
        Ok(GaussianMixtureTask { means, std })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// One draw and the component it came from.
    pub fn sample(&self, rng: &mut Rng) -> (Vec<f64>, usize) {
        let k = rng.below(self.means.len());
        let x = self.means[k].iter().map(|&m| m + self.std * rng.normal()).collect();
        (x, k)
    }

    /// `len` i.i.d. draws as a `len × dim` sequence.
    pub fn sample_sequence(&self, len: usize, rng: &mut Rng) -> Tensor {
        let mut data = Vec::with_capacity(len * self.dim());
        for _ in 0..len {
            data.extend(self.sample(rng).0);
        }
        Tensor::matrix(len, self.dim(), data).expect("shape")
    }

    /// Distance from `x` to the closest component mean.
    pub fn nearest_mean_distance(&self, x: &[f64]) -> f64 {
        let d2 = self.means.iter().map(|m| vec::sq_dist(m, x)).fold(f64::INFINITY, f64::min);
        math::sqrt(d2)
    }
}

/// Task with the default configuration.
pub fn make_task(seed: u64) -> GaussianMixtureTask {
    make_task_with(&TaskConfig::default(), seed).expect("default task config is valid")
}

pub fn make_task_with(cfg: &TaskConfig, seed: u64) -> Result<GaussianMixtureTask> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let h = cfg.mean_half_width;
    let means = (0..cfg.components).map(|_| rng.uniform_vec(cfg.dim, -h, h)).collect();
    GaussianMixtureTask::new(means, cfg.std)
}

/// Sequences of in-context data, each from its own task.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextBatch {
    sequences: Vec<Tensor>,
    tasks: Vec<GaussianMixtureTask>,
}

impl ContextBatch {
    /// Wrap sequences of equal shape `L × D`, `L ≥ 2`. `tasks` may be empty.
    pub fn new(sequences: Vec<Tensor>, tasks: Vec<GaussianMixtureTask>) -> Result<Self> {
        let first = sequences.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (l, d) = (first.rows(), first.cols());
        if l < 2 {
            return Err(Error::invalid(format!("sequences need length at least 2, got {l}")));
        }
        if sequences.iter().any(|s| s.rows() != l || s.cols() != d) {
            return Err(Error::invalid("sequences in a batch must share a shape"));
        }
        if sequences.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("sequences must be finite".into()));
        }
        if !tasks.is_empty() && tasks.len() != sequences.len() {
            return Err(Error::DimensionMismatch { expected: sequences.len(), got: tasks.len() });
        }
        Ok(ContextBatch { sequences, tasks })
    }

    /// `batch` fresh tasks of length-`len` sequences. Sequence `i` uses
    /// generator stream `i` of `seed`.
    pub fn sample(cfg: &TaskConfig, batch: usize, len: usize, seed: u64) -> Result<Self> {
        let mut sequences = Vec::with_capacity(batch);
        let mut tasks = Vec::with_capacity(batch);
        for i in 0..batch {
            let mut rng = Rng::for_stream(seed, i as u64);
            let task = make_task_with(cfg, rng.next_u64())?;
            sequences.push(task.sample_sequence(len, &mut rng));
            tasks.push(task);
        }
        ContextBatch::new(sequences, tasks)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.sequences[0].cols()
    }

    pub fn sequences(&self) -> &[Tensor] {
        &self.sequences
    }

    pub fn tasks(&self) -> &[GaussianMixtureTask] {
        &self.tasks
    }
}
