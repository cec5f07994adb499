use amprob_core::dynamics::{integrate, FlowConfig, Record};
use amprob_core::energy::{tape_gradient, ClamModel, EnergyModel, Hopfield, KdeModel, Kernel, Mchn, PatternSet, TapeEnergy};
use amprob_core::iclebm::{ConditionalEnergy, IclEbmConfig, IclEbmModel};
use amprob_core::latent::{CrpState, MixtureModel};
use amprob_core::numerics::{check_primitives, grad_check, Rng, Tensor, GRAD_CHECK_EPS};

const INSTANCES: u64 = 20;
const TOL: f64 = 1e-5;

fn patterns(rng: &mut Rng, n: usize, d: usize, scale: f64) -> PatternSet {
    PatternSet::new(n, d, rng.normal_vec(n * d).into_iter().map(|v| v * scale).collect()).unwrap()
}

fn check_fd<E: EnergyModel>(name: &str, e: &E, x: &[f64]) {
    let c = grad_check(|p| e.energy(p).unwrap(), |p| e.gradient(p).unwrap(), x, GRAD_CHECK_EPS);
    assert!(c.passed(TOL), "{name}: {c:?}");
}

fn check_tape<E: TapeEnergy>(name: &str, e: &E, x: &[f64]) {
    let a = e.gradient(x).unwrap();
    let t = tape_gradient(e, x).unwrap();
    for (u, v) in a.iter().zip(&t) {
        assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{name}: analytic {u} tape {v}");
    }
    check_fd(name, e, x);
}

#[test]
fn tape_primitives_match_finite_differences() {
    for c in check_primitives(INSTANCES as usize, 11).unwrap() {
        assert!(c.worst.passed(TOL), "{}: {:?}", c.name, c.worst);
    }
}

#[test]
fn zoo_energies_match_tape_and_finite_differences() {
    for s in 0..INSTANCES {
        let mut rng = Rng::new(100 + s);
        let d = 2 + rng.below(5);
        let n = 2 + rng.below(8);
        let x: Vec<f64> = rng.normal_vec(d);
        let p = patterns(&mut rng, n, d, 1.0);

        check_tape("hopfield", &Hopfield::new(p.clone()), &x);
        check_tape("mchn", &Mchn::new(p.clone(), 0.5 + rng.uniform()).unwrap(), &x);
        check_tape("kde", &KdeModel::gaussian(p.clone(), 0.7 + rng.uniform()).unwrap(), &x);

        let clam = ClamModel::new(n, d, p.data().to_vec(), 0.5 + rng.uniform()).unwrap();
        check_tape("clam", &clam, &x);
        let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        check_tape("clam weighted", &clam.clone().with_mixing(w.clone()).unwrap(), &x);

        let crp = CrpState::new(d, 0.1 + 4.0 * rng.uniform(), 0.5 * rng.uniform(), 0.5 + rng.uniform(), 0.5 + rng.uniform())
            .unwrap()
            .with_clusters(p.data().to_vec(), (0..n).map(|_| 1.0 + 5.0 * rng.uniform()).collect())
            .unwrap();
        check_tape("crp", &crp, &x);

        let mix = MixtureModel::new(n, d, p.data().to_vec(), clam.beta(), w).unwrap();
        let v: Vec<f64> = rng.normal_vec(n);
        check_tape("elbo logits", &mix.logit_energy(&x).unwrap(), &v);
        let v: Vec<f64> = rng.normal_vec(n + 1);
        check_tape("crp elbo logits", &crp.logit_energy(&x).unwrap(), &v);
    }
}

#[test]
fn compact_kernels_match_finite_differences_inside_support() {
    for s in 0..INSTANCES {
        let mut rng = Rng::new(300 + s);
        let d = 2 + rng.below(3);
        let p = patterns(&mut rng, 4, d, 0.3);
        let x: Vec<f64> = rng.normal_vec(d).into_iter().map(|v| 0.1 * v).collect();
        let e = KdeModel::new(p, Kernel::Epanechnikov, 5.0).unwrap();
        check_fd("epanechnikov", &e, &x);
    }
}

#[test]
fn conditional_icl_energy_matches_finite_differences() {
    let cfg = IclEbmConfig { width: 16, heads: 2, max_len: 16, ..IclEbmConfig::default() };
    for s in 0..INSTANCES {
        let model = IclEbmModel::new(cfg, s).unwrap();
        let mut rng = Rng::new(500 + s);
        let n = 1 + rng.below(10);
        let ctx = Tensor::matrix(n, 2, rng.normal_vec(2 * n)).unwrap();
        let cond = ConditionalEnergy::new(&model, &ctx).unwrap();
        check_fd("icl conditional", &cond, &rng.normal_vec(2));
    }
}

#[test]
fn backtracking_flows_never_raise_the_energy() {
    let cfg = FlowConfig { dt: 0.5, max_steps: 300, tol: 1e-10, backtracking: true, record: Record::All, max_dt: None };
    for s in 0..INSTANCES {
        let mut rng = Rng::new(700 + s);
        let d = 2 + rng.below(4);
        let p = patterns(&mut rng, 6, d, 1.5);
        let x0: Vec<f64> = rng.normal_vec(d).into_iter().map(|v| 2.0 * v).collect();
        let models: Vec<Box<dyn EnergyModel>> = vec![
            Box::new(Mchn::new(p.clone(), 2.0).unwrap()),
            Box::new(KdeModel::gaussian(p.clone(), 0.5).unwrap()),
            Box::new(ClamModel::new(6, d, p.data().to_vec(), 3.0).unwrap()),
            Box::new(
                CrpState::new(d, 1.0, 0.2, 2.0, 1.0).unwrap().with_clusters(p.data().to_vec(), vec![2.0; 6]).unwrap(),
            ),
        ];
        for m in &models {
            let t = integrate(m.as_ref(), &x0, &cfg).unwrap();
            for w in t.energies.windows(2) {
                assert!(w[1] <= w[0], "energy rose from {} to {}", w[0], w[1]);
            }
        }
    }
}
