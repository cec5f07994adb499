//! Central finite-difference gradient verification.

use alloc::vec::Vec;

use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::Result;

/// Perturbation used by default for central differences at 64-bit.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`; infinite when
    /// the function was non-finite at some probe.
    pub max_rel_error: f64,
    /// False when `f(x ± eps)` or the analytic gradient was non-finite.
    pub finite: bool,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.finite && self.max_rel_error < tol
    }
}

/// Compares `grad(x)` with central differences of `f` at `x`.
pub fn grad_check<F, G>(f: F, grad: G, x: &[f64], eps: f64) -> GradCheck
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(x);
    compare(&f, &analytic, x, eps)
}

fn compare<F: Fn(&[f64]) -> f64>(f: &F, analytic: &[f64], x: &[f64], eps: f64) -> GradCheck {
    let mut worst = 0.0_f64;
    let mut finite = analytic.iter().all(|v| v.is_finite());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            finite = false;
            continue;
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    GradCheck { max_rel_error: if finite { worst } else { f64::INFINITY }, finite }
}

/// Gradient check of a scalar graph built by `build` from a single leaf
/// holding `x`; the analytic side comes from [`Tape::backward`].
pub fn grad_check_tape<B>(build: B, x: &Tensor, eps: f64) -> Result<GradCheck>
where
    B: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = build(&mut tape, leaf)?;
    let grads = tape.backward(root)?;
    let analytic = grads.get_or_zeros(leaf, x.rows(), x.cols()).into_data();
    let (rows, cols) = (x.rows(), x.cols());
    let f = |p: &[f64]| -> f64 {
        let mut t = Tape::new();
        let t_in = Tensor::matrix(rows, cols, p.to_vec()).expect("shape");
        let l = t.constant(t_in);
        match build(&mut t, l) {
            Ok(r) => t.value(r).item(),
            Err(_) => f64::NAN,
        }
    };
    Ok(compare(&f, &analytic, x.data(), eps))
}

type Build = fn(&mut Tape, Var, &mut Rng) -> Result<Var>;

fn weighted_sum(tape: &mut Tape, v: Var, rng: &mut Rng) -> Result<Var> {
    let (r, c) = (tape.value(v).rows(), tape.value(v).cols());
    let w = tape.constant(random(r, c, rng));
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn random(r: usize, c: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(r, c, rng.normal_vec(r * c)).expect("shape")
}

fn konst(tape: &mut Tape, r: usize, c: usize, rng: &mut Rng) -> Var {
    let t = random(r, c, rng);
    tape.constant(t)
}

fn dims(tape: &Tape, v: Var) -> (usize, usize) {
    (tape.value(v).rows(), tape.value(v).cols())
}

/// Every differentiable tape primitive with a builder that wraps it in a
/// random scalar graph around the input `x` (`R × C`, `R, C ≥ 2`). Inputs
/// of `log` are mapped to positives first by the caller's generator.
const PRIMITIVES: &[(&str, Build)] = &[
    ("matmul_lhs", |t, x, r| {
        let b = konst(t, dims(t, x).1, 3, r);
        let y = t.matmul(x, b)?;
        weighted_sum(t, y, r)
    }),
    ("matmul_rhs", |t, x, r| {
        let a = konst(t, 3, dims(t, x).0, r);
        let y = t.matmul(a, x)?;
        weighted_sum(t, y, r)
    }),
    ("matmul_nt", |t, x, r| {
        let b = konst(t, 4, dims(t, x).1, r);
        let y = t.matmul_nt(x, b)?;
        let z = t.matmul_nt(b, x)?;
        let s = t.matmul_nt(x, x)?;
        let (y, z, s) = (weighted_sum(t, y, r)?, weighted_sum(t, z, r)?, weighted_sum(t, s, r)?);
        let yz = t.add(y, z)?;
        t.add(yz, s)
    }),
    ("matmul_tn", |t, x, r| {
        let b = konst(t, dims(t, x).0, 2, r);
        let y = t.matmul_tn(x, b)?;
        let z = t.matmul_tn(b, x)?;
        let (y, z) = (weighted_sum(t, y, r)?, weighted_sum(t, z, r)?);
        t.add(y, z)
    }),
    ("add", |t, x, r| {
        let (rr, c) = dims(t, x);
        let b = konst(t, rr, c, r);
        let y = t.add(x, b)?;
        let y = t.add(y, x)?;
        weighted_sum(t, y, r)
    }),
    ("sub", |t, x, r| {
        let (rr, c) = dims(t, x);
        let b = konst(t, rr, c, r);
        let y = t.sub(b, x)?;
        weighted_sum(t, y, r)
    }),
    ("mul", |t, x, r| {
        let (rr, c) = dims(t, x);
        let b = konst(t, rr, c, r);
        let y = t.mul(x, b)?;
        let y = t.mul(y, x)?;
        weighted_sum(t, y, r)
    }),
    ("scale", |t, x, r| {
        let y = t.scale(x, -1.7);
        weighted_sum(t, y, r)
    }),
    ("add_row", |t, x, r| {
        let row = t.slice(x, (0, 1), (0, dims(t, x).1))?;
        let y = t.add_row(x, row)?;
        weighted_sum(t, y, r)
    }),
    ("add_col", |t, x, r| {
        let col = t.slice(x, (0, dims(t, x).0), (0, 1))?;
        let y = t.add_col(x, col)?;
        weighted_sum(t, y, r)
    }),
    ("mul_col", |t, x, r| {
        let col = t.slice(x, (0, dims(t, x).0), (1, 2))?;
        let y = t.mul_col(x, col)?;
        weighted_sum(t, y, r)
    }),
    ("gelu", |t, x, r| {
        let y = t.gelu(x);
        weighted_sum(t, y, r)
    }),
    ("exp", |t, x, r| {
        let y = t.exp(x);
        weighted_sum(t, y, r)
    }),
    ("log", |t, x, r| {
        let y = t.log(x);
        weighted_sum(t, y, r)
    }),
    ("softmax_rows", |t, x, r| {
        let y = t.softmax_rows(x);
        weighted_sum(t, y, r)
    }),
    ("masked_softmax_rows", |t, x, r| {
        let (rr, c) = dims(t, x);
        let limits = (0..rr).map(|i| 1 + i % c).collect();
        let y = t.masked_softmax_rows(x, limits)?;
        weighted_sum(t, y, r)
    }),
    ("log_sum_exp_rows", |t, x, r| {
        let y = t.log_sum_exp_rows(x);
        weighted_sum(t, y, r)
    }),
    ("layer_norm_rows", |t, x, r| {
        let c = dims(t, x).1;
        let g = t.slice(x, (0, 1), (0, c))?;
        let b = konst(t, 1, c, r);
        let y = t.layer_norm_rows(x, g, b, 1e-5, true)?;
        weighted_sum(t, y, r)
    }),
    ("rms_norm_rows", |t, x, r| {
        let c = dims(t, x).1;
        let g = konst(t, 1, c, r);
        let b = t.slice(x, (1, 2), (0, c))?;
        let y = t.layer_norm_rows(x, g, b, 1e-5, false)?;
        weighted_sum(t, y, r)
    }),
    ("sq_dist", |t, x, r| {
        let b = konst(t, 3, dims(t, x).1, r);
        let y = t.sq_dist(x, b)?;
        let z = t.sq_dist(b, x)?;
        let (y, z) = (weighted_sum(t, y, r)?, weighted_sum(t, z, r)?);
        t.add(y, z)
    }),
    ("slice", |t, x, r| {
        let (rr, c) = dims(t, x);
        let y = t.slice(x, (1, rr), (0, c - 1))?;
        weighted_sum(t, y, r)
    }),
    ("gather_rows", |t, x, r| {
        let rr = dims(t, x).0;
        let idx = [rr - 1, 0, rr - 1, 1 % rr];
        let y = t.gather_rows(x, &idx)?;
        weighted_sum(t, y, r)
    }),
    ("set_cols", |t, x, r| {
        let (rr, c) = dims(t, x);
        let col = t.slice(x, (0, rr), (0, 1))?;
        let cols: Vec<usize> = (0..rr).map(|i| (i + 1) % c).collect();
        let y = t.set_cols(x, col, &cols)?;
        weighted_sum(t, y, r)
    }),
    ("pick_cols", |t, x, r| {
        let (rr, c) = dims(t, x);
        let cols: Vec<usize> = (0..rr).map(|i| (2 * i) % c).collect();
        let y = t.pick_cols(x, &cols)?;
        weighted_sum(t, y, r)
    }),
    ("concat_rows", |t, x, r| {
        let b = konst(t, 2, dims(t, x).1, r);
        let y = t.concat_rows(&[x, b, x])?;
        weighted_sum(t, y, r)
    }),
    ("concat_cols", |t, x, r| {
        let b = konst(t, dims(t, x).0, 2, r);
        let y = t.concat_cols(&[b, x, x])?;
        weighted_sum(t, y, r)
    }),
    ("sum", |t, x, _| {
        let y = t.mul(x, x)?;
        Ok(t.sum(y))
    }),
    ("mean", |t, x, _| {
        let y = t.exp(x);
        Ok(t.mean(y))
    }),
    ("sum_rows", |t, x, r| {
        let y = t.sum_rows(x);
        weighted_sum(t, y, r)
    }),
];

/// Names of the primitives covered by [`check_primitives`].
pub fn primitive_names() -> Vec<&'static str> {
    PRIMITIVES.iter().map(|(n, _)| *n).collect()
}

/// Worst finite-difference result of one primitive over random instances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub instances: usize,
    pub worst: GradCheck,
}

/// Finite-difference checks of every tape primitive on `instances` random
/// inputs each, with shapes between 2×2 and 5×5.
pub fn check_primitives(instances: usize, seed: u64) -> Result<Vec<PrimitiveCheck>> {
    let mut out = Vec::with_capacity(PRIMITIVES.len());
    for (pi, (name, build)) in PRIMITIVES.iter().enumerate() {
        let mut worst = GradCheck { max_rel_error: 0.0, finite: true };
        for inst in 0..instances {
            let mut rng = Rng::for_stream(seed, (pi * 1_000_003 + inst) as u64);
            let (r, c) = (2 + rng.below(4), 2 + rng.below(4));
            let mut x = random(r, c, &mut rng);
            if *name == "log" {
                x = x.map(|v| 0.5 + v.abs());
            }
            let graph_seed = rand::RngCore::next_u64(&mut rng);
            let res = grad_check_tape(|t, v| build(t, v, &mut Rng::new(graph_seed)), &x, GRAD_CHECK_EPS)?;
            if !res.finite {
                worst.finite = false;
            }
            worst.max_rel_error = worst.max_rel_error.max(res.max_rel_error);
        }
        out.push(PrimitiveCheck { name, instances, worst });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let c = grad_check(|_| 3.0, |x| alloc::vec![0.0; x.len()], &[1.0, 2.0], GRAD_CHECK_EPS);
        assert!(c.finite);
        assert_eq!(c.max_rel_error, 0.0);
    }

    #[test]
    fn every_primitive_passes() {
        for c in check_primitives(3, 1).unwrap() {
            assert!(c.worst.passed(1e-5), "{}: {:?}", c.name, c.worst);
        }
    }

    #[test]
    fn non_finite_reported_not_panicking() {
        let c = grad_check(|x| 1.0 / x[0], |_| alloc::vec![f64::NEG_INFINITY], &[0.0], 1e-4);
        assert!(!c.passed(1e-5));
    }
}
