use amprob_core::attnnorm::{vmf_decompose, verify_identity};
use amprob_core::capacity::{capacity_bound, sphere_sample};
use amprob_core::dynamics::{cccp_update, integrate, integrate_logits, langevin, FlowConfig, Record, SamplerConfig};
use amprob_core::energy::{ClamModel, EnergyModel, KdeModel, Mchn};
use amprob_core::latent::{crp_prior, CrpState, LatentState, MixtureModel};
use amprob_core::numerics::{log_sum_exp, Rng, Tensor};
use proptest::prelude::*;

fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

/// Runs the logit flow in chunks from the uniform state until every
/// component of q is within `tol` of `post`, or `budget` steps are spent.
fn flow_reaches(m: &MixtureModel, x: &[f64], post: &[f64], tol: f64, budget: usize) -> bool {
    let cfg = FlowConfig { dt: 0.1, max_steps: 2000, tol: 1e-12, backtracking: true, record: Record::Endpoints, max_dt: Some(4.0) };
    let mut v = LatentState::uniform(post.len()).unwrap();
    let mut spent = 0;
    while spent < budget {
        let t = integrate_logits(m, x, &v, &cfg).unwrap();
        spent += t.step_count();
        v = LatentState::new(t.last().to_vec()).unwrap();
        if v.q().iter().zip(post).all(|(a, b)| (a - b).abs() < tol) {
            return true;
        }
        if t.step_count() < cfg.max_steps {
            return false;
        }
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cccp_step_is_a_kde_gradient_step(seed in 0u64..1000, d in 2usize..8, n in 2usize..32, si in 0usize..3) {
        let sigma = [0.5, 1.0, 2.0][si];
        let p = sphere_sample(d, 1.0 + seed as f64 % 3.0, n, seed).unwrap();
        let kde = KdeModel::gaussian(p.clone(), sigma).unwrap();
        let mchn = Mchn::new(p.clone(), 1.0 / (sigma * sigma)).unwrap();
        let mut rng = Rng::new(seed);
        let mut offset = None;
        for _ in 0..4 {
            let x = rng.normal_vec(d);
            let c = cccp_update(&p, 1.0 / (sigma * sigma), &x).unwrap();
            let g = kde.gradient(&x).unwrap();
            for i in 0..d {
                prop_assert!((c[i] - (x[i] - sigma * sigma * g[i])).abs() < 1e-10);
            }
            let diff = sigma * sigma * kde.energy(&x).unwrap() + sigma * sigma * (n as f64).ln() - mchn.energy(&x).unwrap();
            let o = *offset.get_or_insert(diff);
            prop_assert!((diff - o).abs() < 1e-9);
        }
    }

    #[test]
    fn crp_prior_is_a_distribution(seed in 0u64..10_000, alpha in 0.01..5.0f64, d in 0.0..0.9f64, n in 0usize..40) {
        let mut rng = Rng::new(seed);
        let mut z: Vec<usize> = Vec::new();
        for _ in 0..n {
            let k_plus = z.iter().max().map_or(0, |m| m + 1);
            let w: Vec<f64> = (0..=k_plus).map(|k| crp_prior(&z, alpha, d, k).unwrap()).collect();
            z.push(rng.weighted_index(&w));
        }
        let k_plus = z.iter().max().map_or(0, |m| m + 1);
        let total: f64 = (0..=k_plus).map(|k| crp_prior(&z, alpha, d, k).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(crp_prior(&z, alpha, d, k_plus + 1).unwrap(), 0.0);
    }

    #[test]
    fn elbo_minimum_is_the_evidence(seed in 0u64..1000, k in 2usize..6, d in 1usize..4) {
        let mut rng = Rng::new(seed);
        let mix: Vec<f64> = (0..k).map(|_| 0.1 + rng.uniform()).collect();
        let s: f64 = mix.iter().sum();
        let m = MixtureModel::new(k, d, rng.normal_vec(k * d), 0.5 + rng.uniform(), mix.iter().map(|v| v / s).collect()).unwrap();
        let x = rng.normal_vec(d);
        let l = m.log_joints(&x).unwrap();
        let post = m.posterior(&x).unwrap();
        let at_post = m.elbo_energy(&x, &LatentState::from_probs(&post).unwrap()).unwrap();
        prop_assert!((at_post + log_sum_exp(&l).unwrap()).abs() < 1e-8);
        let other = LatentState::new(rng.normal_vec(k)).unwrap();
        prop_assert!(m.elbo_energy(&x, &other).unwrap() >= at_post - 1e-12);

        prop_assert!(flow_reaches(&m, &x, &post, 1e-6, 500_000));
    }

    #[test]
    fn logit_rhs_ignores_common_shifts(v in arb_vec(5), shift in -20i32..20) {
        let l = vec![-1.0, -2.5, 0.3, -0.7, -4.0];
        let v: Vec<f64> = v.iter().map(|x| x.round()).collect();
        let w: Vec<f64> = v.iter().map(|x| x + shift as f64).collect();
        let a = amprob_core::latent::logit_rhs_from_log_joints(&l, &v);
        let b = amprob_core::latent::logit_rhs_from_log_joints(&l, &w);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn attention_logits_split_into_vmf_terms(seed in 0u64..1000, n in 1usize..10, d in 2usize..10) {
        let mut rng = Rng::new(seed);
        let keys = Tensor::matrix(n, d, rng.normal_vec(n * d)).unwrap();
        let gamma: Vec<f64> = rng.normal_vec(d);
        let delta: Vec<f64> = rng.normal_vec(d);
        let q = rng.normal_vec(d);
        let c = verify_identity(&keys, &gamma, &delta, &q).unwrap();
        prop_assert!(c.max_log_error < 1e-11);
        let dec = vmf_decompose(&keys, &gamma, &delta).unwrap();
        for i in 0..n {
            if dec.kappa[i] > 0.0 {
                let norm: f64 = dec.direction(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_langevin_is_plain_euler(seed in 0u64..1000, steps in 1usize..50) {
        let mut rng = Rng::new(seed);
        let m = ClamModel::new(3, 2, rng.normal_vec(6), 1.5).unwrap();
        let x0 = rng.normal_vec(2);
        let l = langevin(&m, &x0, &SamplerConfig { step: 0.05, noise: 0.0, steps, seed }).unwrap();
        let flow = FlowConfig { dt: 0.05, max_steps: steps, tol: 0.0, backtracking: false, record: Record::All, max_dt: None };
        let e = integrate(&m, &x0, &flow).unwrap();
        prop_assert_eq!(l.states, e.states);
    }

    #[test]
    fn crp_without_new_tables_is_weighted_clam(seed in 0u64..1000, k in 1usize..6, d in 1usize..4) {
        let mut rng = Rng::new(seed);
        let mu = rng.normal_vec(k * d);
        let counts: Vec<f64> = (0..k).map(|_| 1.0 + rng.below(9) as f64).collect();
        let total: f64 = counts.iter().sum();
        let crp = CrpState::new(d, 1e-300, 0.0, 2.0, 1.0).unwrap().with_clusters(mu.clone(), counts.clone()).unwrap();
        let clam = ClamModel::new(k, d, mu, 2.0).unwrap().with_mixing(counts.iter().map(|c| c / total).collect()).unwrap();
        let x = rng.normal_vec(d);
        let (a, b) = (crp.gradient(&x).unwrap(), clam.gradient(&x).unwrap());
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }
}

#[test]
fn capacity_formula_is_exact() {
    for d in 2..=16usize {
        let c = capacity_bound(d).unwrap();
        assert_eq!(c.value, Some(1u64 << (2 * (d - 1))));
    }
}

#[test]
fn higher_concentration_deepens_the_origin_basin() {
    let mu = vec![2.0, 0.0, -2.0, 1.0];
    let counts = vec![3.0, 2.0];
    let low = CrpState::new(2, 0.1, 0.0, 1.0, 1.0).unwrap().with_clusters(mu.clone(), counts.clone()).unwrap();
    let high = CrpState::new(2, 10.0, 0.0, 1.0, 1.0).unwrap().with_clusters(mu, counts).unwrap();
    assert!(high.energy(&[0.0, 0.0]).unwrap() < low.energy(&[0.0, 0.0]).unwrap());
}
