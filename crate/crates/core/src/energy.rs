//! The energy-model zoo.
//!
//! Every model implements [`EnergyModel`] with a hand-written gradient used in
//! hot loops, and [`TapeEnergy`] so the same energy can be recorded on an
//! autodiff tape and checked against it. Additive constants that do not
//! depend on the state are dropped throughout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::check_dim;
use crate::numerics::stable::{lse_unchecked, softmax_in_place};
use crate::numerics::vec::{dot, norm, sq_dist};
use crate::numerics::{math, Tape, Tensor, Var};
use crate::{Error, Result};

/// A scalar energy over `R^D` with its gradient.
pub trait EnergyModel {
    fn dim(&self) -> usize;

    /// Energy at `x`; `x.len() == self.dim()` is the caller's responsibility.
    fn energy_unchecked(&self, x: &[f64]) -> f64;

    /// Writes `∇E(x)` into `out`; lengths are the caller's responsibility.
    fn grad_into(&self, x: &[f64], out: &mut [f64]);

    fn energy(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.energy_unchecked(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, &mut g);
        Ok(g)
    }
}

impl<T: EnergyModel + ?Sized> EnergyModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        (**self).energy_unchecked(x)
    }
    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).grad_into(x, out)
    }
}

/// An energy that can be recorded on an autodiff tape, with the state as a
/// `1 × D` row.
pub trait TapeEnergy: EnergyModel {
    fn energy_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var>;
}

/// `N × D` stored patterns with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatternSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl PatternSet {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("a pattern set needs N >= 1 and D >= 1"));
        }
        check_dim(n * d, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pattern entries must be finite".into()));
        }
        Ok(PatternSet { n, d, data, labels: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            check_dim(d, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        check_dim(self.n, labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn pattern(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Largest L2 norm among the patterns (`M`).
    pub fn largest_norm(&self) -> f64 {
        self.iter().map(norm).fold(0.0, f64::max)
    }

    /// Same patterns with the rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dim(self.n, perm.len())?;
        let mut data = Vec::with_capacity(self.data.len());
        for &i in perm {
            data.extend_from_slice(self.pattern(i));
        }
        Self::new(self.n, self.d, data)
    }

    pub(crate) fn as_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.d, self.data.clone()).expect("shape")
    }
}

/// Classical Hopfield energy `−½ xᵀ (1/N Σ xₙxₙᵀ) x`.
#[derive(Clone, Debug)]
pub struct Hopfield {
    patterns: PatternSet,
}

impl Hopfield {
    pub fn new(patterns: PatternSet) -> Self {
        Hopfield { patterns }
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }
}

impl EnergyModel for Hopfield {
    fn dim(&self) -> usize {
        self.patterns.d
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        let s: f64 = self.patterns.iter().map(|p| dot(p, x) * dot(p, x)).sum();
        -0.5 * s / self.patterns.n as f64
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let inv_n = 1.0 / self.patterns.n as f64;
        for p in self.patterns.iter() {
            let c = -dot(p, x) * inv_n;
            out.iter_mut().zip(p).for_each(|(o, &pi)| *o += c * pi);
        }
    }
}

impl TapeEnergy for Hopfield {
    fn energy_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xs = tape.constant(self.patterns.as_tensor());
        let s = tape.matmul_nt(x, xs)?;
        let sq = tape.mul(s, s)?;
        let total = tape.sum(sq);
        Ok(tape.scale(total, -0.5 / self.patterns.n as f64))
    }
}

/// Modern continuous Hopfield network energy
/// `−β⁻¹ log Σₙ exp(β xᵀxₙ) + ½ xᵀx`.
#[derive(Clone, Debug)]
pub struct Mchn {
    patterns: PatternSet,
    beta: f64,
}

impl Mchn {
    pub fn new(patterns: PatternSet, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(Mchn { patterns, beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    /// `softmax(β Xᵀx)`, the pattern weights seen from `x`.
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        let mut s: Vec<f64> = self.patterns.iter().map(|p| self.beta * dot(p, x)).collect();
        softmax_in_place(&mut s);
        s
    }
}

impl EnergyModel for Mchn {
    fn dim(&self) -> usize {
        self.patterns.d
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        let s: Vec<f64> = self.patterns.iter().map(|p| self.beta * dot(p, x)).collect();
        -lse_unchecked(&s) / self.beta + 0.5 * dot(x, x)
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let w = self.weights(x);
        out.copy_from_slice(x);
        for (p, wi) in self.patterns.iter().zip(w) {
            out.iter_mut().zip(p).for_each(|(o, &pi)| *o -= wi * pi);
        }
    }
}

impl TapeEnergy for Mchn {
    fn energy_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xs = tape.constant(self.patterns.as_tensor());
        let s = tape.matmul_nt(x, xs)?;
        let s = tape.scale(s, self.beta);
        let l = tape.log_sum_exp_rows(s);
        let l = tape.scale(l, -1.0 / self.beta);
        let xx = tape.mul(x, x)?;
        let q = tape.sum(xx);
        let q = tape.scale(q, 0.5);
        tape.add(l, q)
    }
}

/// Clustering associative memory: `K` learnable memories with energy
/// `−β⁻¹ log Σₖ πₖ exp(−β‖μₖ − x‖²)`.
///
/// Without explicit mixing weights every `πₖ = 1`, which is the unweighted
/// form; weights turn it into weighted clustering.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClamModel {
    k: usize,
    d: usize,
    memories: Vec<f64>,
    beta: f64,
    mixing: Option<Vec<f64>>,
}

impl ClamModel {
    pub fn new(k: usize, d: usize, memories: Vec<f64>, beta: f64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::invalid("ClAM needs K >= 1 memories of dimension >= 1"));
        }
        check_dim(k * d, memories.len())?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(ClamModel { k, d, memories, beta, mixing: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], beta: f64) -> Result<Self> {
        let p = PatternSet::from_rows(rows)?;
        Self::new(p.n, p.d, p.data, beta)
    }

    /// Attach mixing weights; they must be positive and sum to 1.
    pub fn with_mixing(mut self, mixing: Vec<f64>) -> Result<Self> {
        check_dim(self.k, mixing.len())?;
        let s: f64 = mixing.iter().sum();
        if mixing.iter().any(|&w| !(w > 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixing weights must be positive and sum to 1"));
        }
        self.mixing = Some(mixing);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn memory(&self, i: usize) -> &[f64] {
        &self.memories[i * self.d..(i + 1) * self.d]
    }

    pub fn memories(&self) -> &[f64] {
        &self.memories
    }

    pub fn memories_mut(&mut self) -> &mut [f64] {
        &mut self.memories
    }

    pub fn mixing(&self) -> Option<&[f64]> {
        self.mixing.as_deref()
    }

    fn log_weight(&self, k: usize) -> f64 {
        self.mixing.as_ref().map_or(0.0, |m| math::ln(m[k]))
    }

    /// Attraction scores `log πₖ − β‖μₖ − x‖²`.
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k).map(|k| self.log_weight(k) - self.beta * sq_dist(self.memory(k), x)).collect()
    }

    /// Softmax attention of `x` over the memories.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.scores(x);
        softmax_in_place(&mut s);
        s
    }

    /// Velocity `Σₖ (μₖ − x) softmaxₖ(−β‖μₖ − x‖²)`, which equals `−½∇E`.
    pub fn dynamics_rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, x.len())?;
        let mut v = vec![0.0; self.d];
        self.rhs_into(x, &mut v);
        Ok(v)
    }

    pub(crate) fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        let w = self.responsibilities(x);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, wk) in w.iter().enumerate() {
            for ((o, &m), &xi) in out.iter_mut().zip(self.memory(k)).zip(x) {
                *o += wk * (m - xi);
            }
        }
    }

    pub(crate) fn memories_tensor(&self) -> Tensor {
        Tensor::matrix(self.k, self.d, self.memories.clone()).expect("shape")
    }

    pub(crate) fn log_mixing_row(&self) -> Tensor {
        Tensor::row((0..self.k).map(|k| self.log_weight(k)).collect())
    }
}

impl EnergyModel for ClamModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        -lse_unchecked(&self.scores(x)) / self.beta
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        self.rhs_into(x, out);
        out.iter_mut().for_each(|o| *o *= -2.0);
    }
}

impl TapeEnergy for ClamModel {
    fn energy_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mu = tape.constant(self.memories_tensor());
        let d = tape.sq_dist(x, mu)?;
        let s = tape.scale(d, -self.beta);
        let lw = tape.constant(self.log_mixing_row());
        let s = tape.add_row(s, lw)?;
        let l = tape.log_sum_exp_rows(s);
        Ok(tape.scale(l, -1.0 / self.beta))
    }
}

/// Kernel shapes for [`KdeModel`]. Normalizing constants are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Kernel {
    /// `exp(−½‖u‖²)`; the bandwidth is the length scale `σ`.
    Gaussian,
    /// `max(0, 1 − ‖u‖²)`.
    Epanechnikov,
    /// `1` on the unit ball, `0` outside.
    Uniform,
}

/// Result of a KDE energy evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeEval {
    pub energy: f64,
    /// The kernel vanished at every pattern; `energy` is `+∞`.
    pub underflow: bool,
}

/// Kernel density estimator energy `−log Σₙ K((x − xₙ)/h)`.
#[derive(Clone, Debug)]
pub struct KdeModel {
    patterns: PatternSet,
    kernel: Kernel,
    bandwidth: f64,
}

impl KdeModel {
    /// Gaussian KDE with length scale `sigma`.
    pub fn gaussian(patterns: PatternSet, sigma: f64) -> Result<Self> {
        Self::new(patterns, Kernel::Gaussian, sigma)
    }

    pub fn new(patterns: PatternSet, kernel: Kernel, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KdeModel { patterns, kernel, bandwidth })
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Bandwidth `h`; for the Gaussian kernel this is `σ`.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sigma(&self) -> f64 {
        self.bandwidth
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    fn log_kernels(&self, x: &[f64]) -> Vec<f64> {
        let h2 = self.bandwidth * self.bandwidth;
        self.patterns
            .iter()
            .map(|p| {
                let u2 = sq_dist(x, p) / h2;
                match self.kernel {
                    Kernel::Gaussian => -0.5 * u2,
                    Kernel::Epanechnikov if u2 < 1.0 => math::ln(1.0 - u2),
                    Kernel::Uniform if u2 <= 1.0 => 0.0,
                    _ => f64::NEG_INFINITY,
                }
            })
            .collect()
    }

    /// Energy with an explicit underflow flag; never NaN.
    pub fn evaluate(&self, x: &[f64]) -> Result<KdeEval> {
        check_dim(self.patterns.d, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> KdeEval {
        let l = lse_unchecked(&self.log_kernels(x));
        if l == f64::NEG_INFINITY {
            KdeEval { energy: f64::INFINITY, underflow: true }
        } else {
            KdeEval { energy: -l, underflow: false }
        }
    }
}

impl EnergyModel for KdeModel {
    fn dim(&self) -> usize {
        self.patterns.d
    }

    fn energy_unchecked(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x).energy
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let h2 = self.bandwidth * self.bandwidth;
        match self.kernel {
            Kernel::Uniform => {}
            Kernel::Gaussian => {
                let mut w = self.log_kernels(x);
                softmax_in_place(&mut w);
                for (p, wn) in self.patterns.iter().zip(w) {
                    for ((o, &xi), &pi) in out.iter_mut().zip(x).zip(p) {
                        *o += wn * (xi - pi) / h2;
                    }
                }
            }
            Kernel::Epanechnikov => {
                // ∇(−log Σ K) = Σₙ 2(x − xₙ)/h² / Σ K, over patterns in support.
                let mut total = 0.0;
                for p in self.patterns.iter() {
                    let u2 = sq_dist(x, p) / h2;
                    if u2 < 1.0 {
                        total += 1.0 - u2;
                        for ((o, &xi), &pi) in out.iter_mut().zip(x).zip(p) {
                            *o += 2.0 * (xi - pi) / h2;
                        }
                    }
                }
                if total > 0.0 {
                    out.iter_mut().for_each(|o| *o /= total);
                }
            }
        }
    }
}

impl TapeEnergy for KdeModel {
    fn energy_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.kernel != Kernel::Gaussian {
            return Err(Error::invalid("only the Gaussian KDE is recorded on the tape"));
        }
        let xs = tape.constant(self.patterns.as_tensor());
        let d = tape.sq_dist(x, xs)?;
        let s = tape.scale(d, -0.5 / (self.bandwidth * self.bandwidth));
        let l = tape.log_sum_exp_rows(s);
        Ok(tape.scale(l, -1.0))
    }
}

/// Gradient of `energy_on_tape` at `x` through the autodiff tape.
pub fn tape_gradient<E: TapeEnergy + ?Sized>(model: &E, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.len())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::row(x.to_vec()));
    let e = model.energy_on_tape(&mut tape, xv)?;
    let g = tape.backward(e)?;
    Ok(g.get_or_zeros(xv, 1, x.len()).into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn rand_set(rng: &mut Rng, n: usize, d: usize) -> PatternSet {
        PatternSet::new(n, d, rng.normal_vec(n * d)).unwrap()
    }

    #[test]
    fn hopfield_examples() {
        let h = Hopfield::new(PatternSet::from_rows(&[vec![1.0, 0.0]]).unwrap());
        assert_eq!(h.energy(&[1.0, 0.0]).unwrap(), -0.5);
        assert_eq!(h.energy(&[0.0, 3.0]).unwrap(), 0.0);
        let h2 = Hopfield::new(PatternSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        assert!((h2.energy(&[1.0, 1.0]).unwrap() + 0.5).abs() < 1e-15);
        assert!(h2.energy(&[1.0]).is_err());
    }

    #[test]
    fn mchn_examples() {
        let p = PatternSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let m = Mchn::new(p.clone(), 1.0).unwrap();
        assert!((m.energy(&[1.0, 0.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(m.energy(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(Mchn::new(p.clone(), 0.0).is_err());
        assert!(Mchn::new(p, -1.0).is_err());
    }

    #[test]
    fn mchn_matches_naive_sum() {
        let mut rng = Rng::new(11);
        let p = rand_set(&mut rng, 3, 2);
        let beta = 0.7;
        let m = Mchn::new(p.clone(), beta).unwrap();
        for _ in 0..20 {
            let x = rng.normal_vec(2);
            let naive: f64 = p.iter().map(|q| (beta * dot(q, &x)).exp()).sum();
            let expect = -naive.ln() / beta + 0.5 * dot(&x, &x);
            assert!((m.energy(&x).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn clam_examples() {
        let one = ClamModel::from_rows(&[vec![0.3, -1.2]], 2.0).unwrap();
        assert!(one.energy(&[0.3, -1.2]).unwrap().abs() < 1e-15);
        let two = ClamModel::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 1.0).unwrap();
        let e = two.energy(&[0.0, 0.0]).unwrap();
        assert!((e - (1.0 - 2f64.ln())).abs() < 1e-14);
        assert_eq!(two.dynamics_rhs(&[0.0, 0.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(one.dynamics_rhs(&[0.3, -1.2]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn clam_high_beta_approaches_hard_min() {
        let mut rng = Rng::new(5);
        let mems: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(3)).collect();
        let beta = 1e3;
        let m = ClamModel::from_rows(&mems, beta).unwrap();
        for _ in 0..20 {
            let x = rng.normal_vec(3);
            let hard = mems.iter().map(|mu| sq_dist(mu, &x)).fold(f64::INFINITY, f64::min);
            let e = m.energy(&x).unwrap();
            // −β⁻¹ log K ≤ E − min ≤ 0
            assert!(e <= hard + 1e-12);
            assert!(e >= hard - (4f64).ln() / beta - 1e-12);
        }
    }

    #[test]
    fn clam_rhs_is_minus_half_autodiff_gradient() {
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let mems: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(4)).collect();
            let m = ClamModel::from_rows(&mems, 0.8).unwrap();
            let x = rng.normal_vec(4);
            let rhs = m.dynamics_rhs(&x).unwrap();
            let g = tape_gradient(&m, &x).unwrap();
            for (r, gi) in rhs.iter().zip(&g) {
                assert!((r + 0.5 * gi).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clam_weighted_mixing() {
        let m = ClamModel::from_rows(&[vec![0.0], vec![2.0]], 1.0)
            .unwrap()
            .with_mixing(vec![0.25, 0.75])
            .unwrap();
        let x = [1.0];
        let expect = -((0.25 * (-1.0f64).exp()) + 0.75 * (-1.0f64).exp()).ln();
        assert!((m.energy(&x).unwrap() - expect).abs() < 1e-14);
        assert!(ClamModel::from_rows(&[vec![0.0]], 1.0).unwrap().with_mixing(vec![0.5]).is_err());
    }

    #[test]
    fn degenerate_models_rejected() {
        assert!(PatternSet::new(0, 2, vec![]).is_err());
        assert!(ClamModel::new(0, 2, vec![], 1.0).is_err());
        assert!(PatternSet::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn kde_single_pattern_minimum() {
        let k = KdeModel::gaussian(PatternSet::from_rows(&[vec![1.0, 2.0]]).unwrap(), 0.7).unwrap();
        assert_eq!(k.energy(&[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn kde_two_pattern_landscape() {
        let k = KdeModel::gaussian(PatternSet::from_rows(&[vec![-2.0], vec![2.0]]).unwrap(), 0.5)
            .unwrap();
        let grid: Vec<f64> = (0..=800).map(|i| -4.0 + 0.01 * i as f64).collect();
        let e: Vec<f64> = grid.iter().map(|&x| k.energy(&[x]).unwrap()).collect();
        let mut minima = Vec::new();
        let mut maxima = Vec::new();
        for i in 1..e.len() - 1 {
            if e[i] < e[i - 1] && e[i] < e[i + 1] {
                minima.push(grid[i]);
            }
            if e[i] > e[i - 1] && e[i] > e[i + 1] {
                maxima.push(grid[i]);
            }
        }
        assert_eq!(minima.len(), 2);
        assert!((minima[0] + 2.0).abs() < 0.02 && (minima[1] - 2.0).abs() < 0.02);
        assert_eq!(maxima.len(), 1);
        assert!(maxima[0].abs() < 0.02);
    }

    #[test]
    fn compact_kernels_flag_underflow() {
        let p = PatternSet::from_rows(&[vec![0.0]]).unwrap();
        for kernel in [Kernel::Uniform, Kernel::Epanechnikov] {
            let k = KdeModel::new(p.clone(), kernel, 1.0).unwrap();
            let far = k.evaluate(&[5.0]).unwrap();
            assert!(far.underflow);
            assert_eq!(far.energy, f64::INFINITY);
            assert!(!k.evaluate(&[0.5]).unwrap().underflow);
            assert!(k.gradient(&[5.0]).unwrap().iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = Rng::new(21);
        let p = rand_set(&mut rng, 6, 3);
        let perm = [3, 0, 5, 1, 4, 2];
        let q = p.permuted(&perm).unwrap();
        let x = rng.normal_vec(3);
        let m1 = Mchn::new(p.clone(), 0.9).unwrap().energy(&x).unwrap();
        let m2 = Mchn::new(q.clone(), 0.9).unwrap().energy(&x).unwrap();
        assert!((m1 - m2).abs() < 1e-12);
        let k1 = KdeModel::gaussian(p.clone(), 0.8).unwrap().energy(&x).unwrap();
        let k2 = KdeModel::gaussian(q.clone(), 0.8).unwrap().energy(&x).unwrap();
        assert!((k1 - k2).abs() < 1e-12);
        let c1 = ClamModel::new(6, 3, p.data().to_vec(), 0.5).unwrap().energy(&x).unwrap();
        let c2 = ClamModel::new(6, 3, q.data().to_vec(), 0.5).unwrap().energy(&x).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
    }
}
