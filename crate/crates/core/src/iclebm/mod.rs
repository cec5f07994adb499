//! In-context energy learning: a causal transformer reads a sequence of
//! points and emits, at every position, the energy of that point given the
//! points before it. Training is contrastive divergence with Langevin
//! negatives.

mod eval;
mod model;
mod task;
mod train;

pub use eval::{
    bootstrap_mean, energy_gap, energy_grid, grid_of, icl_energy, icl_sample, BootstrapInterval,
    ConditionalEnergy, EnergyGap, EnergyGrid, GapConfig, GridSpec, IclSampleConfig,
};
pub use model::{IclEbmConfig, IclEbmModel};
pub use task::{make_task, make_task_with, ContextBatch, GaussianMixtureTask, TaskConfig};
pub use train::{
    cd_loss_and_grad, sample_negatives, train_icl, CdConfig, CdGradient, CdStepReport, CdTrainer,
    IclTrainConfig, SequenceNegatives,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Rng, Tensor};

    fn small() -> IclEbmModel {
        let cfg = IclEbmConfig { width: 16, heads: 2, max_len: 12, ..IclEbmConfig::default() };
        IclEbmModel::new(cfg, 5).unwrap()
    }

    fn seq(len: usize, seed: u64) -> Tensor {
        let mut r = Rng::new(seed);
        Tensor::matrix(len, 2, r.normal_vec(2 * len)).unwrap()
    }

    #[test]
    fn future_tokens_do_not_change_earlier_energies() {
        let m = small();
        let x = seq(10, 1);
        let e = icl_energy(&m, &x).unwrap();
        let mut y = x.clone();
        for v in &mut y.data_mut()[12..] {
            *v = -3.0 * *v + 1.0;
        }
        let f = icl_energy(&m, &y).unwrap();
        for n in 0..5 {
            assert_eq!(e[n].to_bits(), f[n].to_bits(), "position {n}");
        }
        assert_ne!(e[6], f[6]);
    }

    #[test]
    fn candidate_at_own_position_matches_real_path_bitwise() {
        let m = small();
        let x = seq(9, 2);
        let all = m.all_energies(&x).unwrap();
        let cache = m.prefix_cache(&x).unwrap();
        let rows: Vec<usize> = (0..9).collect();
        let (e, _) = m.candidate_energies(&cache, &x, &rows, false).unwrap();
        for p in 0..9 {
            assert_eq!(e[p].to_bits(), all[p].to_bits(), "position {p}");
        }
    }

    #[test]
    fn conditional_energy_matches_truncated_forward() {
        let m = small();
        let x = seq(7, 3);
        let ctx = Tensor::matrix(6, 2, x.data()[..12].to_vec()).unwrap();
        let q = Tensor::row(x.row_slice(6).to_vec());
        let c = ConditionalEnergy::new(&m, &ctx).unwrap().energies(&q).unwrap()[0];
        let full = icl_energy(&m, &x).unwrap();
        assert!((c - full[5]).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn rejects_short_sequences() {
        let m = small();
        assert!(icl_energy(&m, &seq(1, 0)).is_err());
        assert!(ConditionalEnergy::new(&m, &Tensor::zeros(0, 2)).is_err());
    }

    #[test]
    fn negatives_equal_to_positives_give_exact_zero() {
        let m = small();
        let batch = ContextBatch::new(vec![seq(8, 4), seq(8, 5)], vec![]).unwrap();
        let negs: Vec<_> = batch
            .sequences()
            .iter()
            .map(|s| SequenceNegatives::copies_of_positives(s, &[1, 3, 4, 7], 3))
            .collect();
        let g = cd_loss_and_grad(&m, &batch, &negs).unwrap();
        assert_eq!(g.loss, 0.0);
        for t in &g.grads {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn training_step_is_deterministic() {
        let cfg = CdConfig { negatives_per_position: 2, positions_per_sequence: Some(3), langevin_steps: 3, ..CdConfig::default() };
        let batch = ContextBatch::sample(&TaskConfig::default(), 2, 8, 9).unwrap();
        let mut a = CdTrainer::new(small(), cfg).unwrap();
        let mut b = CdTrainer::new(small(), cfg).unwrap();
        let ra = a.cd_training_step(&batch).unwrap();
        let rb = b.cd_training_step(&batch).unwrap();
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        assert_eq!(a.model(), b.model());
        assert!(ra.applied);
    }

    #[test]
    fn sample_with_no_steps_returns_the_uniform_start() {
        let m = small();
        let ctx = seq(4, 6);
        let cfg = IclSampleConfig {
            sampler: crate::dynamics::SamplerConfig { steps: 0, noise: 0.0, seed: 11, ..Default::default() },
            box_half_width: 3.0,
        };
        let s = icl_sample(&m, &ctx, &cfg).unwrap();
        let mut r = Rng::new(11);
        assert_eq!(s, r.uniform_vec(2, -3.0, 3.0));
        assert_eq!(s, icl_sample(&m, &ctx, &cfg).unwrap());
    }
}
