//! Pre-normalized attention read as inhomogeneous von Mises-Fisher clustering.
//!
//! With the query written as `q = γ ⊙ q̃ + δ`, each attention logit splits as
//! `kᵢ·q = κᵢ mᵢ·q̃ + log πᵢ` where `κᵢ = ‖kᵢ ⊙ γ‖`, `mᵢ = (kᵢ ⊙ γ)/κᵢ`
//! and `πᵢ = exp(kᵢ·δ)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::check_dim;
use crate::numerics::stable::softmax_in_place;
use crate::numerics::vec::{dot, norm};
use crate::numerics::{math, Tensor};
use crate::{Error, Result};

/// Layer normalization over the feature axis; with `rms` set, the mean is
/// not subtracted and the root mean square replaces the standard deviation.
pub fn layer_norm(x: &[f64], gamma: &[f64], delta: &[f64], eps: f64, rms: bool) -> Result<Vec<f64>> {
    check_dim(x.len(), gamma.len())?;
    check_dim(x.len(), delta.len())?;
    if x.is_empty() {
        return Err(Error::invalid("layer norm of an empty vector"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let z = standardize(x, eps, rms);
    Ok(z.iter().zip(gamma).zip(delta).map(|((zi, g), d)| g * zi + d).collect())
}

/// `(x − mean)/√(var + ε)`, or `x/√(mean(x²) + ε)` for the RMS variant.
fn standardize(x: &[f64], eps: f64, rms: bool) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = if rms { 0.0 } else { x.iter().sum::<f64>() / n };
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / math::sqrt(var + eps);
    x.iter().map(|v| (v - mean) * inv).collect()
}

/// `V softmax(K q)` with `K` of shape `N × D` and `V` of shape `N × D_v`.
pub fn self_attention(q: &[f64], keys: &Tensor, values: &Tensor) -> Result<Vec<f64>> {
    check_dim(keys.cols(), q.len())?;
    check_dim(keys.rows(), values.rows())?;
    if keys.rows() == 0 {
        return Err(Error::invalid("attention needs at least one key"));
    }
    let mut w: Vec<f64> = (0..keys.rows()).map(|i| dot(keys.row_slice(i), q)).collect();
    softmax_in_place(&mut w);
    let mut out = vec![0.0; values.cols()];
    for (i, wi) in w.iter().enumerate() {
        out.iter_mut().zip(values.row_slice(i)).for_each(|(o, v)| *o += wi * v);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VmfDecomposition {
    pub kappa: Vec<f64>,
    /// `N × D` unit mean directions.
    pub directions: Tensor,
    /// `log πᵢ = kᵢ·δ`, kept in the log domain to avoid overflow.
    pub log_pi: Vec<f64>,
    /// Components with `kᵢ ⊙ γ = 0`; their direction is the first basis vector.
    pub degenerate: Vec<bool>,
}

impl VmfDecomposition {
    pub fn pi(&self) -> Vec<f64> {
        self.log_pi.iter().map(|&l| math::exp(l)).collect()
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        self.directions.row_slice(i)
    }

    /// Component posterior `∝ πᵢ exp(κᵢ mᵢ·q̃)`.
    pub fn posterior(&self, q_tilde: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.directions.cols(), q_tilde.len())?;
        let mut l: Vec<f64> = (0..self.kappa.len())
            .map(|i| self.kappa[i] * dot(self.direction(i), q_tilde) + self.log_pi[i])
            .collect();
        softmax_in_place(&mut l);
        Ok(l)
    }
}

pub fn vmf_decompose(keys: &Tensor, gamma: &[f64], delta: &[f64]) -> Result<VmfDecomposition> {
    let d = keys.cols();
    check_dim(d, gamma.len())?;
    check_dim(d, delta.len())?;
    if keys.rows() == 0 || d == 0 {
        return Err(Error::invalid("decomposition needs at least one key of dimension >= 1"));
    }
    let n = keys.rows();
    let mut kappa = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n * d);
    let mut log_pi = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    for i in 0..n {
        let k = keys.row_slice(i);
        let kg: Vec<f64> = k.iter().zip(gamma).map(|(a, b)| a * b).collect();
        let kap = norm(&kg);
        kappa.push(kap);
        if kap > 0.0 {
            dirs.extend(kg.iter().map(|v| v / kap));
            degenerate.push(false);
        } else {
            dirs.push(1.0);
            dirs.extend(core::iter::repeat_n(0.0, d - 1));
            degenerate.push(true);
        }
        log_pi.push(dot(k, delta));
    }
    Ok(VmfDecomposition { kappa, directions: Tensor::matrix(n, d, dirs)?, log_pi, degenerate })
}

/// How the normalized query `q̃` is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum QueryConvention {
    /// `q̃` is the raw standardized vector, so `‖q̃‖ ≈ √D`.
    Standardized,
    /// `q̃` is divided by `√D` (so `‖q̃‖ ≈ 1`) and `γ` multiplied by `√D`.
    UnitNorm,
}

/// A query written as `γ_eff ⊙ q̃ + δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedQuery {
    pub q: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub gamma: Vec<f64>,
    pub convention: QueryConvention,
}

/// Normalizes a raw query and returns it split into scale, direction and shift.
pub fn normalize_query(
    x: &[f64],
    gamma: &[f64],
    delta: &[f64],
    eps: f64,
    rms: bool,
    convention: QueryConvention,
) -> Result<NormalizedQuery> {
    let q = layer_norm(x, gamma, delta, eps, rms)?;
    let mut q_tilde = standardize(x, eps, rms);
    let mut g = gamma.to_vec();
    if convention == QueryConvention::UnitNorm {
        let s = math::sqrt(x.len() as f64);
        q_tilde.iter_mut().for_each(|v| *v /= s);
        g.iter_mut().for_each(|v| *v *= s);
    }
    Ok(NormalizedQuery { q, q_tilde, gamma: g, convention })
}

/// Deviation of `‖q̃‖` from 1 beyond which the clustering reading is flagged.
pub const QUERY_NORM_WARNING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    /// `maxᵢ |kᵢ·q − (κᵢ mᵢ·q̃ + log πᵢ)|`.
    pub max_log_error: f64,
    /// Largest gap between `softmax(Kq)` and the component posterior.
    pub max_posterior_error: f64,
    pub q_tilde_norm: f64,
    /// `‖q̃‖` is further than [`QUERY_NORM_WARNING`] from 1.
    pub norm_warning: bool,
}

/// Checks the logit decomposition for `q = γ ⊙ q̃ + δ`.
pub fn verify_identity(keys: &Tensor, gamma: &[f64], delta: &[f64], q_tilde: &[f64]) -> Result<IdentityCheck> {
    check_dim(keys.cols(), q_tilde.len())?;
    let dec = vmf_decompose(keys, gamma, delta)?;
    let q: Vec<f64> = q_tilde.iter().zip(gamma).zip(delta).map(|((t, g), d)| g * t + d).collect();
    let logits: Vec<f64> = (0..keys.rows()).map(|i| dot(keys.row_slice(i), &q)).collect();
    let mut max_log_error = 0.0f64;
    for (i, l) in logits.iter().enumerate() {
        let rhs = dec.kappa[i] * dot(dec.direction(i), q_tilde) + dec.log_pi[i];
        max_log_error = max_log_error.max((l - rhs).abs());
    }
    let mut attn = logits;
    softmax_in_place(&mut attn);
    let post = dec.posterior(q_tilde)?;
    let max_posterior_error = attn.iter().zip(&post).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let q_tilde_norm = norm(q_tilde);
    Ok(IdentityCheck {
        max_log_error,
        max_posterior_error,
        q_tilde_norm,
        norm_warning: (q_tilde_norm - 1.0).abs() > QUERY_NORM_WARNING,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn layer_norm_examples() {
        let x = [1.0, -1.0, 1.0, -1.0];
        let ones = [1.0; 4];
        let zeros = [0.0; 4];
        let y = layer_norm(&x, &ones, &zeros, 1e-12, false).unwrap();
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-11));
        let delta = [0.5, -0.2, 3.0, 0.0];
        let c = layer_norm(&[2.5; 4], &[1.7; 4], &delta, 1e-5, false).unwrap();
        assert_eq!(c, delta);
        let mut rng = Rng::new(2);
        let x = rng.normal_vec(6);
        let g = rng.normal_vec(6);
        let d = rng.normal_vec(6);
        let y = layer_norm(&x, &g, &d, 1e-5, false).unwrap();
        let mean = x.iter().sum::<f64>() / 6.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        for i in 0..6 {
            let expect = g[i] * (x[i] - mean) / (var + 1e-5).sqrt() + d[i];
            assert!((y[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_examples() {
        let k = Tensor::matrix(1, 2, vec![0.3, 0.4]).unwrap();
        let v = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(self_attention(&[5.0, -1.0], &k, &v).unwrap(), [1.0, 2.0, 3.0]);
        let k = Tensor::matrix(2, 2, vec![0.3, 0.4, 0.3, 0.4]).unwrap();
        let v = Tensor::matrix(2, 1, vec![2.0, 4.0]).unwrap();
        assert!((self_attention(&[1.0, 1.0], &k, &v).unwrap()[0] - 3.0).abs() < 1e-15);
        assert!(self_attention(&[1.0], &k, &v).is_err());
    }

    #[test]
    fn trivial_decompositions() {
        let k = Tensor::matrix(2, 2, vec![3.0, 4.0, 0.0, -2.0]).unwrap();
        let dec = vmf_decompose(&k, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(dec.kappa, [5.0, 2.0]);
        assert_eq!(dec.direction(0), &[0.6, 0.8]);
        assert_eq!(dec.pi(), [1.0, 1.0]);
        let ortho = Tensor::matrix(2, 2, vec![1.0, 0.0, -3.0, 0.0]).unwrap();
        let dec = vmf_decompose(&ortho, &[1.0, 2.0], &[0.0, 7.0]).unwrap();
        assert_eq!(dec.pi(), [1.0, 1.0]);
    }

    #[test]
    fn degenerate_component_is_flagged() {
        let k = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let dec = vmf_decompose(&k, &[0.0, 1.0], &[0.2, 0.1]).unwrap();
        assert!(dec.degenerate[0] && !dec.degenerate[1]);
        assert_eq!(dec.kappa[0], 0.0);
        let chk = verify_identity(&k, &[0.0, 1.0], &[0.2, 0.1], &[0.6, 0.8]).unwrap();
        assert!(chk.max_log_error < 1e-15);
    }

    #[test]
    fn identity_on_unit_query() {
        let mut rng = Rng::new(4);
        let k = Tensor::matrix(5, 3, rng.normal_vec(15)).unwrap();
        let q = rng.normal_vec(3);
        let r = norm(&q);
        let q: Vec<f64> = q.iter().map(|v| v / r).collect();
        let chk = verify_identity(&k, &[1.0; 3], &[0.0; 3], &q).unwrap();
        assert!(chk.max_log_error < 1e-14);
        assert!(!chk.norm_warning);
    }

    #[test]
    fn standardized_queries_have_norm_sqrt_d() {
        let mut rng = Rng::new(6);
        let x = rng.normal_vec(16);
        let nq = normalize_query(&x, &[1.0; 16], &[0.0; 16], 1e-9, false, QueryConvention::Standardized).unwrap();
        assert!((norm(&nq.q_tilde) - 4.0).abs() < 1e-6);
        let k = Tensor::matrix(3, 16, rng.normal_vec(48)).unwrap();
        let chk = verify_identity(&k, &nq.gamma, &[0.0; 16], &nq.q_tilde).unwrap();
        assert!(chk.norm_warning);
        let unit = normalize_query(&x, &[1.0; 16], &[0.0; 16], 1e-9, false, QueryConvention::UnitNorm).unwrap();
        assert!((norm(&unit.q_tilde) - 1.0).abs() < 1e-6);
        assert_eq!(nq.q, unit.q);
        let rebuilt: Vec<f64> = unit.q_tilde.iter().zip(&unit.gamma).map(|(t, g)| t * g).collect();
        assert!(rebuilt.iter().zip(&unit.q).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
