use alloc::format;
use alloc::vec::Vec;

use super::dataset::{nearest, Dataset};
use super::kmeans::kmeans_plus_plus;
use crate::dynamics::{integrate, FlowConfig, Record};
use crate::energy::ClamModel;
use crate::latent::{LatentState, MixtureModel};
use crate::numerics::vec::{argmax, sq_dist};
use crate::numerics::{Adam, AdamConfig, Rng, Tape, Tensor, Var};
use crate::{Error, Result};

/// How initial memories are picked from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Init {
    /// k-means++ seeding.
    #[default]
    KMeansPlusPlus,
    /// `K` data points drawn without replacement.
    RandomPoints,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub k: usize,
    pub beta: f64,
    /// Euler steps `T` of the rollout (ClAM) or of each E-step (ClAM+ELBO).
    pub rollout_steps: usize,
    pub dt: f64,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub init: Init,
    /// Independent runs; the one with the lowest final loss is kept.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            beta: 1.0,
            rollout_steps: 15,
            dt: 0.1,
            optimizer: AdamConfig { lr: 0.05, ..AdamConfig::default() },
            epochs: 200,
            seed: 0,
            init: Init::KMeansPlusPlus,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.k == 0 || self.k > data.len() {
            return Err(Error::invalid(format!("need 1 <= K <= N, got K = {} with N = {}", self.k, data.len())));
        }
        if self.rollout_steps == 0 {
            return Err(Error::invalid("rollout_steps must be >= 1"));
        }
        if !(self.beta > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid("beta and dt must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: ClamModel,
    /// Loss before the first update, then after every epoch.
    pub loss_history: Vec<f64>,
    /// Index of the restart that produced `model`.
    pub restart: usize,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("non-empty")
    }
}

fn init_memories(data: &Dataset, cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    let d = data.dim();
    match cfg.init {
        Init::KMeansPlusPlus => kmeans_plus_plus(data.features(), d, cfg.k, rng),
        Init::RandomPoints => {
            Ok(rng.sample_indices(data.len(), cfg.k).into_iter().flat_map(|i| data.row(i).to_vec()).collect())
        }
    }
}

/// Records the mean reconstruction loss `1/N Σₙ ‖xₙ − xₙ(T)‖²` where each
/// `xₙ(t)` follows `x ← x + dt Σₖ (μₖ − x) softmaxₖ(−β‖μₖ − x‖²)` for `steps` steps.
pub fn rollout_loss_on_tape(tape: &mut Tape, mu: Var, x0: Var, beta: f64, steps: usize, dt: f64) -> Result<Var> {
    let mut x = x0;
    for _ in 0..steps {
        let d = tape.sq_dist(x, mu)?;
        let s = tape.scale(d, -beta);
        let p = tape.softmax_rows(s);
        let pull = tape.matmul(p, mu)?;
        let v = tape.sub(pull, x)?;
        let v = tape.scale(v, dt);
        x = tape.add(x, v)?;
    }
    let r = tape.sub(x0, x)?;
    let r2 = tape.mul(r, r)?;
    let total = tape.sum(r2);
    let n = tape.value(x0).rows() as f64;
    Ok(tape.scale(total, 1.0 / n))
}

/// Reconstruction loss and its gradient with respect to the memories.
pub fn rollout_loss_and_grad(model: &ClamModel, data: &Dataset, steps: usize, dt: f64) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let mu = tape.leaf(Tensor::matrix(model.k(), data.dim(), model.memories().to_vec())?);
    let x0 = tape.constant(Tensor::matrix(data.len(), data.dim(), data.features().to_vec())?);
    let loss = rollout_loss_on_tape(&mut tape, mu, x0, model.beta(), steps, dt)?;
    let g = tape.backward(loss)?;
    Ok((tape.value(loss).item(), g.get_or_zeros(mu, model.k(), data.dim()).into_data()))
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("training loss diverged at epoch {epoch}: {loss}")))
    }
}

/// Learns memories by gradient descent on the rollout reconstruction loss.
pub fn train_clam(data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate(data)?;
    let mut best: Option<TrainReport> = None;
    for r in 0..cfg.restarts {
        let mut rng = Rng::for_stream(cfg.seed, r as u64);
        let mut model = ClamModel::new(cfg.k, data.dim(), init_memories(data, cfg, &mut rng)?, cfg.beta)?;
        let mut adam = Adam::new(cfg.optimizer, &[cfg.k * data.dim()]);
        let mut history = Vec::with_capacity(cfg.epochs + 1);
        for epoch in 0..cfg.epochs {
            let (loss, g) = rollout_loss_and_grad(&model, data, cfg.rollout_steps, cfg.dt)?;
            check_finite(loss, epoch)?;
            history.push(loss);
            adam.step(&mut [model.memories_mut()], &[&g]);
        }
        let (loss, _) = rollout_loss_and_grad(&model, data, cfg.rollout_steps, cfg.dt)?;
        check_finite(loss, cfg.epochs)?;
        history.push(loss);
        let run = TrainReport { model, loss_history: history, restart: r };
        if best.as_ref().is_none_or(|b| run.final_loss() < b.final_loss()) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[derive(Clone, Debug)]
pub struct ElboTrainReport {
    pub model: MixtureModel,
    /// Mean ELBO energy before the first update, then after every epoch.
    pub loss_history: Vec<f64>,
    /// Final per-point variational logits.
    pub states: Vec<LatentState>,
    pub restart: usize,
}

impl ElboTrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("non-empty")
    }

    pub fn clam(&self) -> ClamModel {
        let k = self.model.k();
        let d = self.model.dim();
        let mems = (0..k).flat_map(|i| self.model.memory(i).to_vec()).collect();
        ClamModel::new(k, d, mems, self.model.beta()).expect("valid mixture")
    }
}

fn mixture_of(mems: &[f64], k: usize, d: usize, beta: f64) -> Result<MixtureModel> {
    MixtureModel::uniform(k, d, mems.to_vec(), beta)
}

fn mean_elbo(model: &MixtureModel, data: &Dataset, states: &[LatentState]) -> Result<f64> {
    let mut total = 0.0;
    for (x, s) in data.rows().zip(states) {
        total += model.elbo_energy(x, s)?;
    }
    Ok(total / data.len() as f64)
}

/// Generalized EM on the ELBO energy: each epoch first runs `rollout_steps`
/// Euler steps of every point's logit flow (warm-started from the previous
/// epoch), then takes one optimizer step on the memories with `q` held fixed.
pub fn train_clam_elbo(data: &Dataset, cfg: &TrainConfig) -> Result<ElboTrainReport> {
    cfg.validate(data)?;
    let (k, d) = (cfg.k, data.dim());
    let flow = FlowConfig { dt: cfg.dt, max_steps: cfg.rollout_steps, tol: 0.0, backtracking: true, record: Record::Endpoints, max_dt: None };
    let mut best: Option<ElboTrainReport> = None;
    for r in 0..cfg.restarts {
        let mut rng = Rng::for_stream(cfg.seed, r as u64);
        let mut mems = init_memories(data, cfg, &mut rng)?;
        let mut states: Vec<LatentState> = (0..data.len()).map(|_| LatentState::uniform(k)).collect::<Result<_>>()?;
        let mut adam = Adam::new(cfg.optimizer, &[k * d]);
        let mut history = Vec::with_capacity(cfg.epochs + 1);
        history.push(mean_elbo(&mixture_of(&mems, k, d, cfg.beta)?, data, &states)?);
        for epoch in 0..cfg.epochs {
            let model = mixture_of(&mems, k, d, cfg.beta)?;
            for (x, s) in data.rows().zip(states.iter_mut()) {
                let e = model.logit_energy(x)?;
                let t = integrate(&e, s.logits(), &flow)?;
                *s = LatentState::new(t.last().to_vec())?;
            }
            // ∂/∂μₖ of Σₙ −qₙₖ log p(xₙ, k) = Σₙ qₙₖ 2β(μₖ − xₙ)
            let mut g = alloc::vec![0.0; k * d];
            let n = data.len() as f64;
            for (x, s) in data.rows().zip(&states) {
                let q = s.q();
                for c in 0..k {
                    for j in 0..d {
                        g[c * d + j] += q[c] * 2.0 * cfg.beta * (mems[c * d + j] - x[j]) / n;
                    }
                }
            }
            adam.step(&mut [&mut mems], &[&g]);
            let loss = mean_elbo(&mixture_of(&mems, k, d, cfg.beta)?, data, &states)?;
            check_finite(loss, epoch)?;
            history.push(loss);
        }
        let model = mixture_of(&mems, k, d, cfg.beta)?;
        let run = ElboTrainReport { model, loss_history: history, states, restart: r };
        if best.as_ref().is_none_or(|b| run.final_loss() < b.final_loss()) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Hard assignment labels with per-point convergence flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    /// False where the rollout hit its step budget; the label then comes from the final state.
    pub converged: Vec<bool>,
}

impl Assignment {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

/// Runs each point's dynamics to a fixed point and labels it by the nearest
/// memory (lowest index on ties).
pub fn assign_hard(model: &ClamModel, data: &Dataset, flow: &FlowConfig) -> Result<Assignment> {
    let flow = FlowConfig { record: Record::Endpoints, ..*flow };
    let mut labels = Vec::with_capacity(data.len());
    let mut converged = Vec::with_capacity(data.len());
    for x in data.rows() {
        let t = integrate(model, x, &flow)?;
        labels.push(nearest(t.last(), model.memories(), data.dim()));
        converged.push(t.converged());
    }
    Ok(Assignment { labels, converged })
}

/// Labels by the argmax of the cluster posterior (lowest index on ties).
pub fn assign_soft(model: &MixtureModel, data: &Dataset) -> Result<Vec<usize>> {
    data.rows().map(|x| Ok(argmax(&model.log_joints(x)?))).collect()
}

/// Labels by the nearest memory without running dynamics.
pub fn assign_nearest(memories: &[f64], data: &Dataset) -> Vec<usize> {
    data.rows().map(|x| nearest(x, memories, data.dim())).collect()
}

/// Mean squared distance from each point to its nearest memory.
pub fn quantization_error(memories: &[f64], data: &Dataset) -> f64 {
    let d = data.dim();
    data.rows()
        .map(|x| memories.chunks_exact(d).map(|m| sq_dist(m, x)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / data.len() as f64
}
