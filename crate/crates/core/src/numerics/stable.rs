//! Overflow-free log-sum-exp and softmax.

use alloc::vec::Vec;

use super::math;
use crate::{Error, Result};

fn check_input(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("NaN input"));
    }
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log Σ exp(v_i)`, shifted by the maximum.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    check_input(v)?;
    Ok(lse_unchecked(v))
}

pub(crate) fn lse_unchecked(v: &[f64]) -> f64 {
    let m = max_of(v);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    let s: f64 = v.iter().map(|&x| math::exp(x - m)).sum();
    m + math::ln(s)
}

/// `log Σ w_i exp(v_i)` for nonnegative weights; entries with zero weight are
/// skipped. Returns `-inf` when every weight is zero.
pub fn log_sum_exp_weighted(v: &[f64], w: &[f64]) -> Result<f64> {
    check_input(v)?;
    if v.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: w.len() });
    }
    if w.iter().any(|&x| x.is_nan() || x < 0.0) {
        return Err(Error::invalid("weights must be nonnegative"));
    }
    let shifted: Vec<f64> = v
        .iter()
        .zip(w)
        .map(|(&x, &wi)| if wi > 0.0 { x + math::ln(wi) } else { f64::NEG_INFINITY })
        .collect();
    Ok(lse_unchecked(&shifted))
}

/// Softmax with shift-by-max.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_input(v)?;
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax; the caller guarantees a non-empty, NaN-free slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = max_of(v);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - m);
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_examples() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        let c = 3.25;
        let v = log_sum_exp(&[c, c, c, c]).unwrap();
        assert!((v - (c + 4f64.ln())).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(big.is_finite());
    }

    #[test]
    fn lse_errors() {
        assert!(log_sum_exp(&[]).is_err());
        assert!(log_sum_exp(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), [0.5, 0.5]);
        assert_eq!(softmax(&[7.0]).unwrap(), [1.0]);
        assert_eq!(
            softmax(&[1.0, 2.0, 3.0]).unwrap(),
            softmax(&[101.0, 102.0, 103.0]).unwrap()
        );
        assert!(softmax(&[f64::NAN]).is_err());
    }

    #[test]
    fn weighted_lse_skips_zero_weights() {
        let v = log_sum_exp_weighted(&[1.0, 500.0], &[1.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(log_sum_exp_weighted(&[1.0], &[0.0]).unwrap(), f64::NEG_INFINITY);
    }

    proptest::proptest! {
        #[test]
        fn lse_bounds(v in proptest::collection::vec(-700.0f64..700.0, 1..32)) {
            let l = log_sum_exp(&v).unwrap();
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(l >= m - 1e-12);
            proptest::prop_assert!(l <= m + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..32)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn softmax_integer_shift_is_bit_identical(
            v in proptest::collection::vec(-40i32..40, 1..16),
            c in -1000i32..1000,
        ) {
            let a: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = v.iter().map(|&x| (x + c) as f64).collect();
            proptest::prop_assert_eq!(softmax(&a).unwrap(), softmax(&b).unwrap());
        }
    }
}
