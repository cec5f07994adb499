//! Contrastive-divergence training with Langevin negatives.
//!
//! For every trained position `p` of a sequence the negatives start uniform
//! on the box `[-B, B]^D`, descend the conditional energy `E(· | x_<p)` with
//! noisy gradient steps and are then frozen. The loss at `p` is
//! `E(x_p | x_<p) − mean_c E(x⁻_c | x_<p)`, averaged over trained positions.
//!
//! The real token at `p` is scored through the same candidate path as its
//! negatives, once per negative, with rows interleaved `[x_p, x⁻_1, x_p, x⁻_2, ...]`
//! and weights `±w`. When the negatives equal the positives every weighted
//! pair cancels exactly, so the loss and the parameter gradient are exactly 0.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::model::IclEbmModel;
use super::task::{ContextBatch, TaskConfig};
use crate::numerics::{math, Adam, AdamConfig, Rng, Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CdConfig {
    pub langevin_steps: usize,
    pub step: f64,
    pub noise: f64,
    pub negatives_per_position: usize,
    /// Train this many random positions per sequence; every position when `None`.
    pub positions_per_sequence: Option<usize>,
    /// Negatives start uniform on `[-box_half_width, box_half_width]^D`.
    pub box_half_width: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            langevin_steps: 15,
            step: 3.16,
            noise: 0.01,
            negatives_per_position: 8,
            positions_per_sequence: None,
            box_half_width: 3.0,
            optimizer: AdamConfig { lr: 1e-3, clip_norm: Some(1.0), ..AdamConfig::default() },
            seed: 0,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be nonnegative"));
        }
        if self.negatives_per_position == 0 {
            return Err(Error::invalid("negatives_per_position must be positive"));
        }
        if self.positions_per_sequence == Some(0) {
            return Err(Error::invalid("positions_per_sequence must be positive"));
        }
        if !(self.box_half_width > 0.0 && self.box_half_width.is_finite()) {
            return Err(Error::invalid("box_half_width must be positive"));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Frozen negatives of one sequence: `points[i]` (C × D) sit at `positions[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceNegatives {
    pub positions: Vec<usize>,
    pub points: Vec<Tensor>,
}

impl SequenceNegatives {
    /// Every real token at `positions`, repeated `copies` times.
    pub fn copies_of_positives(sequence: &Tensor, positions: &[usize], copies: usize) -> Self {
        let points = positions
            .iter()
            .map(|&p| {
                let row = sequence.row_slice(p);
                let data = (0..copies).flat_map(|_| row.iter().copied()).collect();
                Tensor::matrix(copies, row.len(), data).expect("shape")
            })
            .collect();
        SequenceNegatives { positions: positions.to_vec(), points }
    }

    pub fn count(&self) -> usize {
        self.points.iter().map(Tensor::rows).sum()
    }
}

/// Loss, parameter gradient and summary statistics of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CdGradient {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    /// Positions contributing to the loss.
    pub positions: usize,
    pub mean_real_energy: f64,
    pub mean_negative_energy: f64,
}

impl CdGradient {
    pub fn grad_norm(&self) -> f64 {
        let s: f64 = self.grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum();
        math::sqrt(s)
    }
}

/// Positions `1..L` (or a sorted random subset of them) to train.
fn pick_positions(len: usize, subset: Option<usize>, rng: &mut Rng) -> Vec<usize> {
    match subset {
        Some(k) if k < len - 1 => {
            let mut p: Vec<usize> = rng.sample_indices(len - 1, k).into_iter().map(|i| i + 1).collect();
            p.sort_unstable();
            p
        }
        _ => (1..len).collect(),
    }
}

/// Langevin negatives for every sequence of `batch`. Chains whose state or
/// gradient turns non-finite are dropped; the second value counts them.
pub fn sample_negatives(
    model: &IclEbmModel,
    batch: &ContextBatch,
    cfg: &CdConfig,
    rng: &mut Rng,
) -> Result<(Vec<SequenceNegatives>, usize)> {
    cfg.validate()?;
    let d = batch.dim();
    let c = cfg.negatives_per_position;
    let b = cfg.box_half_width;
    let mut out = Vec::with_capacity(batch.len());
    let mut skipped = 0;
    for seq in batch.sequences() {
        model.check_input(seq)?;
        let positions = pick_positions(seq.rows(), cfg.positions_per_sequence, rng);
        let rows: Vec<usize> = positions.iter().flat_map(|&p| core::iter::repeat_n(p, c)).collect();
        let m = rows.len();
        let mut x = Tensor::matrix(m, d, rng.uniform_vec(m * d, -b, b))?;
        let mut alive = vec![true; m];
        let cache = model.prefix_cache(seq)?;
        for _ in 0..cfg.langevin_steps {
            let (_, g) = model.candidate_energies(&cache, &x, &rows, true)?;
            let g = g.expect("gradient requested");
            let (xd, gd) = (x.data_mut(), g.data());
            for i in 0..m {
                if !alive[i] {
                    continue;
                }
                let xi = &mut xd[i * d..(i + 1) * d];
                let gi = &gd[i * d..(i + 1) * d];
                for (xv, &gv) in xi.iter_mut().zip(gi) {
                    *xv += -cfg.step * gv + cfg.noise * rng.normal();
                }
                if !xi.iter().chain(gi).all(|v| v.is_finite()) {
                    alive[i] = false;
                    // Park the chain on a finite point so the shared forward stays finite.
                    xi.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        let mut points = Vec::new();
        let mut kept_positions = Vec::new();
        for (pi, &p) in positions.iter().enumerate() {
            let mut data = Vec::new();
            for i in pi * c..(pi + 1) * c {
                if alive[i] {
                    data.extend_from_slice(x.row_slice(i));
                } else {
                    skipped += 1;
                }
            }
            if !data.is_empty() {
                kept_positions.push(p);
                points.push(Tensor::matrix(data.len() / d, d, data)?);
            }
        }
        out.push(SequenceNegatives { positions: kept_positions, points });
    }
    Ok((out, skipped))
}

/// Contrastive-divergence loss and its parameter gradient for fixed negatives.
pub fn cd_loss_and_grad(
    model: &IclEbmModel,
    batch: &ContextBatch,
    negatives: &[SequenceNegatives],
) -> Result<CdGradient> {
    if negatives.len() != batch.len() {
        return Err(Error::DimensionMismatch { expected: batch.len(), got: negatives.len() });
    }
    let d = batch.dim();
    let total_positions: usize =
        negatives.iter().map(|n| n.points.iter().filter(|t| t.rows() > 0).count()).sum();
    if total_positions == 0 {
        return Err(Error::invalid("no negatives to train on"));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let mut loss = None;
    let (mut real_sum, mut neg_sum) = (0.0, 0.0);
    for (seq, neg) in batch.sequences().iter().zip(negatives) {
        model.check_input(seq)?;
        if neg.positions.len() != neg.points.len() {
            return Err(Error::invalid("negatives: one point block per position"));
        }
        let mut rows = Vec::new();
        let mut data = Vec::new();
        let mut weights = Vec::new();
        for (&p, pts) in neg.positions.iter().zip(&neg.points) {
            if p == 0 || p >= seq.rows() {
                return Err(Error::invalid(format!("negative position {p} out of range")));
            }
            if pts.cols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: pts.cols() });
            }
            if pts.rows() == 0 {
                continue;
            }
            let w = 1.0 / (total_positions as f64 * pts.rows() as f64);
            for i in 0..pts.rows() {
                rows.extend([p, p]);
                data.extend_from_slice(seq.row_slice(p));
                data.extend_from_slice(pts.row_slice(i));
                weights.extend([w, -w]);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let x = tape.constant(seq.clone());
        let pass = model.real_forward(&mut tape, &bound, x)?;
        let xc = tape.constant(Tensor::matrix(rows.len(), d, data)?);
        let e = model.candidate_forward(&mut tape, &bound, &pass.caches, pass.len, xc, &rows)?;
        for (ev, &w) in tape.value(e).data().iter().zip(&weights) {
            if w > 0.0 {
                real_sum += w * ev;
            } else {
                neg_sum -= w * ev;
            }
        }
        let wv = tape.constant(Tensor::column(weights));
        let we = tape.mul(e, wv)?;
        let l = tape.sum(we);
        loss = Some(match loss {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let loss = loss.expect("at least one sequence has negatives");
    let grads = tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.get_or_zeros(v, p.rows(), p.cols()))
        .collect();
    Ok(CdGradient {
        loss: tape.value(loss).item(),
        grads,
        positions: total_positions,
        mean_real_energy: real_sum,
        mean_negative_energy: neg_sum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CdStepReport {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_real_energy: f64,
    pub mean_negative_energy: f64,
    /// Negative chains dropped for turning non-finite.
    pub skipped: usize,
    /// False when the gradient was non-finite and the update was withheld.
    pub applied: bool,
}

/// A model together with its optimizer state.
#[derive(Clone, Debug)]
pub struct CdTrainer {
    model: IclEbmModel,
    adam: Adam,
    cfg: CdConfig,
    steps: u64,
    skipped_total: usize,
}

impl CdTrainer {
    pub fn new(model: IclEbmModel, cfg: CdConfig) -> Result<Self> {
        cfg.validate()?;
        let sizes: Vec<usize> = model.params().iter().map(Tensor::len).collect();
        Ok(CdTrainer { adam: Adam::new(cfg.optimizer, &sizes), model, cfg, steps: 0, skipped_total: 0 })
    }

    pub fn model(&self) -> &IclEbmModel {
        &self.model
    }

    pub fn into_model(self) -> IclEbmModel {
        self.model
    }

    pub fn config(&self) -> &CdConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped_total(&self) -> usize {
        self.skipped_total
    }

    /// Sample negatives, compute the loss and apply one optimizer step.
    /// Step `t` draws its randomness from stream `t` of the configured seed.
    pub fn cd_training_step(&mut self, batch: &ContextBatch) -> Result<CdStepReport> {
        let mut rng = Rng::for_stream(self.cfg.seed, self.steps);
        let (negatives, skipped) = sample_negatives(&self.model, batch, &self.cfg, &mut rng)?;
        self.skipped_total += skipped;
        let g = cd_loss_and_grad(&self.model, batch, &negatives)?;
        let applied = g.loss.is_finite() && g.grads.iter().all(Tensor::is_finite);
        if applied {
            let mut params: Vec<&mut [f64]> = self.model.params_mut().iter_mut().map(Tensor::data_mut).collect();
            let grads: Vec<&[f64]> = g.grads.iter().map(Tensor::data).collect();
            self.adam.step(&mut params, &grads);
        }
        self.steps += 1;
        Ok(CdStepReport {
            step: self.steps,
            loss: g.loss,
            grad_norm: g.grad_norm(),
            mean_real_energy: g.mean_real_energy,
            mean_negative_energy: g.mean_negative_energy,
            skipped,
            applied,
        })
    }
}

/// A full training run on freshly sampled tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IclTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub task: TaskConfig,
    pub cd: CdConfig,
    /// Seed for the task and sequence stream; the sampler uses `cd.seed`.
    pub data_seed: u64,
}

impl Default for IclTrainConfig {
    fn default() -> Self {
        IclTrainConfig {
            steps: 2000,
            batch_size: 8,
            seq_len: 65,
            task: TaskConfig::default(),
            cd: CdConfig::default(),
            data_seed: 0,
        }
    }
}

impl IclTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.seq_len < 2 {
            return Err(Error::invalid("seq_len must be at least 2"));
        }
        self.task.validate()?;
        self.cd.validate()
    }
}

/// Train for `cfg.steps` steps, calling `on_step` after each one.
pub fn train_icl(
    model: IclEbmModel,
    cfg: &IclTrainConfig,
    mut on_step: impl FnMut(&CdStepReport),
) -> Result<(IclEbmModel, Vec<CdStepReport>)> {
    cfg.validate()?;
    if cfg.seq_len > model.config().max_len {
        return Err(Error::invalid("seq_len exceeds the model's max_len"));
    }
    if cfg.task.dim != model.config().d_in {
        return Err(Error::DimensionMismatch { expected: model.config().d_in, got: cfg.task.dim });
    }
    let mut trainer = CdTrainer::new(model, cfg.cd)?;
    let mut history = Vec::with_capacity(cfg.steps);
    let mut seeds = Rng::new(cfg.data_seed);
    for _ in 0..cfg.steps {
        let batch = ContextBatch::sample(&cfg.task, cfg.batch_size, cfg.seq_len, seeds_next(&mut seeds))?;
        let r = trainer.cd_training_step(&batch)?;
        on_step(&r);
        history.push(r);
    }
    Ok((trainer.into_model(), history))
}

fn seeds_next(rng: &mut Rng) -> u64 {
    rand::RngCore::next_u64(rng)
}
