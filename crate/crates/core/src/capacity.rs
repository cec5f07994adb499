//! Storage, retrieval and capacity of Gaussian-KDE memories.
//!
//! Retrieval dynamics are the Gaussian mean-shift update
//! `x ← Σₙ softmaxₙ(−‖x − xₙ‖²/2σ²) xₙ`, i.e. a gradient step of size `σ²`
//! on the KDE energy. On patterns of equal norm it coincides with the MCHN
//! concave-convex update at `β = σ⁻²`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::energy::PatternSet;
use crate::error::check_dim;
use crate::numerics::stable::softmax_in_place;
use crate::numerics::vec::{dist, norm, sq_dist};
use crate::numerics::{math, Rng};
use crate::{Error, Result};

/// `Δₙ = ½ min_{n'≠n} ‖xₙ − xₙ'‖²` for every pattern.
pub fn separation(p: &PatternSet) -> Result<Vec<f64>> {
    let n = p.len();
    if n < 2 {
        return Err(Error::invalid("separation needs at least two patterns"));
    }
    let mut best = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(p.pattern(i), p.pattern(j));
            best[i] = best[i].min(d);
            best[j] = best[j].min(d);
        }
    }
    Ok(best.into_iter().map(|d| 0.5 * d).collect())
}

/// `σ² / (N M)`.
pub fn radius_of_convergence(sigma: f64, n: usize, m: f64) -> Result<f64> {
    if !(sigma > 0.0) || n == 0 || !(m > 0.0) {
        return Err(Error::invalid("sigma, N and M must all be positive"));
    }
    Ok(sigma * sigma / (n as f64 * m))
}

/// Minimum separation `2σ²/N + σ² log(2(N−1)N M²/σ²)` demanded of every pattern.
pub fn separation_bound(sigma: f64, n: usize, m: f64) -> f64 {
    let s2 = sigma * sigma;
    let nf = n as f64;
    2.0 * s2 / nf + s2 * math::ln(2.0 / s2 * (nf - 1.0) * nf * m * m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WellSeparated {
    pub holds: bool,
    /// `minₙ (Δₙ − bound)`; nonnegative exactly when `holds`.
    pub margin: f64,
    pub bound: f64,
}

/// Checks the well-separated condition `Δₙ ≥ bound` for every pattern.
pub fn well_separated(p: &PatternSet, sigma: f64) -> Result<WellSeparated> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let delta = separation(p)?;
    let bound = separation_bound(sigma, p.len(), p.largest_norm());
    Ok(well_separated_from(&delta, bound))
}

/// The well-separated verdict for precomputed separations and bound.
pub fn well_separated_from(delta: &[f64], bound: f64) -> WellSeparated {
    let margin = delta.iter().map(|d| d - bound).fold(f64::INFINITY, f64::min);
    WellSeparated { holds: margin >= 0.0, margin, bound }
}

/// `2^{2(D−1)}` as a base-2 exponent, with the value when it fits in `u64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CapacityBound {
    pub log2: u32,
    /// `None` once the value exceeds `u64::MAX` (D ≥ 33).
    pub value: Option<u64>,
}

pub fn capacity_bound(d: usize) -> Result<CapacityBound> {
    if d < 2 {
        return Err(Error::invalid(format!("capacity needs D >= 2, got {d}")));
    }
    let log2 = u32::try_from(2 * (d - 1)).map_err(|_| Error::invalid("D too large"))?;
    Ok(CapacityBound { log2, value: 1u64.checked_shl(log2).filter(|_| log2 < 64) })
}

/// `N` points drawn uniformly on the radius-`m` sphere in `R^d`.
pub fn sphere_sample(d: usize, m: f64, n: usize, seed: u64) -> Result<PatternSet> {
    let mut rng = Rng::new(seed);
    sphere_sample_with(&mut rng, d, m, n)
}

pub fn sphere_sample_with(rng: &mut Rng, d: usize, m: f64, n: usize) -> Result<PatternSet> {
    if d == 0 || n == 0 || !(m > 0.0) {
        return Err(Error::invalid("sphere sampling needs D, N >= 1 and M > 0"));
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut v = rng.normal_vec(d);
        let mut r = norm(&v);
        while r == 0.0 {
            v = rng.normal_vec(d);
            r = norm(&v);
        }
        data.extend(v.iter().map(|x| x / r * m));
    }
    PatternSet::new(n, d, data)
}

/// Approximately equidistant points on the radius-`m` sphere: random starts
/// spread by projected gradient steps on the pairwise energy `Σ 1/‖xᵢ − xⱼ‖²`.
pub fn repulsion_sample(d: usize, m: f64, n: usize, seed: u64, iters: usize) -> Result<PatternSet> {
    let start = sphere_sample(d, 1.0, n, seed)?;
    let mut x: Vec<Vec<f64>> = start.iter().map(|p| p.to_vec()).collect();
    let step = 0.5 / (n as f64);
    for _ in 0..iters {
        let mut force = vec![vec![0.0; d]; n];
        for i in 0..n {
            for j in i + 1..n {
                let r2 = sq_dist(&x[i], &x[j]).max(1e-12);
                let c = 2.0 / (r2 * r2);
                for k in 0..d {
                    let f = c * (x[i][k] - x[j][k]);
                    force[i][k] += f;
                    force[j][k] -= f;
                }
            }
        }
        for (xi, fi) in x.iter_mut().zip(&force) {
            let fnorm = norm(fi);
            let scale = if fnorm > 1.0 { 1.0 / fnorm } else { 1.0 };
            for (a, f) in xi.iter_mut().zip(fi) {
                *a += step * scale * f;
            }
            let r = norm(xi);
            xi.iter_mut().for_each(|a| *a /= r);
        }
    }
    let data = x.into_iter().flatten().map(|v| v * m).collect();
    PatternSet::new(n, d, data)
}

/// One Gaussian mean-shift step at bandwidth `sigma`.
pub fn mean_shift_step(p: &PatternSet, sigma: f64, x: &[f64], out: &mut [f64]) {
    let inv = -0.5 / (sigma * sigma);
    let mut w: Vec<f64> = p.iter().map(|q| inv * sq_dist(q, x)).collect();
    softmax_in_place(&mut w);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (q, wn) in p.iter().zip(w) {
        out.iter_mut().zip(q).for_each(|(o, &qi)| *o += wn * qi);
    }
}

/// Iterates [`mean_shift_step`] until `‖Δx‖∞ < tol`; returns the final point
/// and whether the tolerance was met within `max_iter` steps.
pub fn mean_shift(p: &PatternSet, sigma: f64, x0: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, bool)> {
    check_dim(p.dim(), x0.len())?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for _ in 0..max_iter {
        mean_shift_step(p, sigma, &x, &mut next);
        let delta = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        core::mem::swap(&mut x, &mut next);
        if delta < tol {
            return Ok((x, true));
        }
    }
    Ok((x, false))
}

/// Iteration budget and tolerance for storage checks.
pub const STORAGE_MAX_ITER: usize = 1000;
pub const STORAGE_TOL: f64 = 1e-8;

/// Why a pattern failed the storage check.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NotStored {
    /// Some probe did not converge within the budget.
    NotConverged,
    /// Probes reached different fixed points.
    DistinctFixedPoints,
    /// The fixed point lies outside the probe ball.
    OutsideBall,
    /// The ball intersects another pattern's ball.
    OverlappingBalls,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CapacityReport {
    /// Per-pattern separation (empty for a single pattern).
    pub separation: Vec<f64>,
    pub min_separation: f64,
    pub largest_norm: f64,
    /// Radius of each probe ball.
    pub radius: Vec<f64>,
    pub stored: Vec<bool>,
    pub reasons: Vec<Option<NotStored>>,
    /// `‖xₙ − xₙ*‖` with `xₙ*` the common fixed point (mean over probes).
    pub retrieval_error: Vec<f64>,
    /// Mean retrieval error over all patterns.
    pub mean_retrieval_error: f64,
}

impl CapacityReport {
    pub fn stored_fraction(&self) -> f64 {
        self.stored.iter().filter(|s| **s).count() as f64 / self.stored.len() as f64
    }

    pub fn all_stored(&self) -> bool {
        self.stored.iter().all(|s| *s)
    }
}

/// Point uniformly distributed in the ball of radius `r` around `center`.
pub fn ball_sample(rng: &mut Rng, center: &[f64], r: f64) -> Vec<f64> {
    let d = center.len();
    let mut dir = rng.normal_vec(d);
    let mut n = norm(&dir);
    while n == 0.0 {
        dir = rng.normal_vec(d);
        n = norm(&dir);
    }
    let radius = r * math::powf(rng.uniform(), 1.0 / d as f64);
    center.iter().zip(&dir).map(|(c, u)| c + radius * u / n).collect()
}

/// Empirical storage check: `probes` points uniform in the ball of radius
/// `min(σ²/(NM), probe_radius)` around each pattern are run to fixed points.
/// A pattern is stored when all of its probes converge to one fixed point
/// inside its ball and the ball is disjoint from every other ball.
pub fn check_storage(p: &PatternSet, sigma: f64, probes: usize, probe_radius: f64, seed: u64) -> Result<CapacityReport> {
    if !(sigma > 0.0) || !(probe_radius > 0.0) || probes == 0 {
        return Err(Error::invalid("sigma, probe radius and probe count must be positive"));
    }
    let n = p.len();
    let m = p.largest_norm();
    let r = if m > 0.0 { radius_of_convergence(sigma, n, m)?.min(probe_radius) } else { probe_radius };
    let (sep, min_sep) = if n >= 2 {
        let s = separation(p)?;
        let mn = s.iter().copied().fold(f64::INFINITY, f64::min);
        (s, mn)
    } else {
        (Vec::new(), f64::INFINITY)
    };
    let mut rng = Rng::new(seed);
    let mut stored = Vec::with_capacity(n);
    let mut reasons = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for i in 0..n {
        let xi = p.pattern(i);
        let mut reason = None;
        let overlaps = (0..n).any(|j| j != i && dist(xi, p.pattern(j)) <= 2.0 * r);
        let mut fps: Vec<Vec<f64>> = Vec::with_capacity(probes);
        for _ in 0..probes {
            let q = ball_sample(&mut rng, xi, r);
            let (fp, ok) = mean_shift(p, sigma, &q, STORAGE_TOL, STORAGE_MAX_ITER)?;
            if !ok && reason.is_none() {
                reason = Some(NotStored::NotConverged);
            }
            fps.push(fp);
        }
        let mut mean = vec![0.0; p.dim()];
        for fp in &fps {
            mean.iter_mut().zip(fp).for_each(|(a, b)| *a += b / probes as f64);
        }
        // Fixed points are only resolved to the convergence tolerance.
        let spread_tol = 1e-6 * (1.0 + m);
        if reason.is_none() && fps.iter().any(|fp| dist(fp, &mean) > spread_tol) {
            reason = Some(NotStored::DistinctFixedPoints);
        }
        if reason.is_none() && dist(&mean, xi) > r {
            reason = Some(NotStored::OutsideBall);
        }
        if reason.is_none() && overlaps {
            reason = Some(NotStored::OverlappingBalls);
        }
        stored.push(reason.is_none());
        reasons.push(reason);
        errors.push(dist(xi, &mean));
    }
    let mean_err = errors.iter().sum::<f64>() / n as f64;
    Ok(CapacityReport {
        separation: sep,
        min_separation: min_sep,
        largest_norm: m,
        radius: vec![r; n],
        stored,
        reasons,
        retrieval_error: errors,
        mean_retrieval_error: mean_err,
    })
}

/// One cell of the retrieval experiment.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RetrievalConfig {
    pub d: usize,
    pub n: usize,
    /// Sphere radius; `None` means `2√(D−1)` (and `1` at `D = 1`).
    pub m: Option<f64>,
    pub sigma: f64,
    pub queries_per_pattern: usize,
    /// Expected norm of the query perturbation.
    pub perturbation: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            d: 4,
            n: 64,
            m: None,
            sigma: 1.0,
            queries_per_pattern: 100,
            perturbation: 1.0,
            seed: 0,
            max_iter: 1000,
            tol: 1e-8,
        }
    }
}

impl RetrievalConfig {
    pub fn radius(&self) -> f64 {
        self.m.unwrap_or_else(|| if self.d > 1 { 2.0 * math::sqrt((self.d - 1) as f64) } else { 1.0 })
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalReport {
    pub d: usize,
    pub n: usize,
    pub m: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Mean of final over initial query-to-pattern distance.
    pub ratio_a: f64,
    /// Mean final query-to-pattern distance over the mean pairwise pattern distance.
    pub ratio_b: f64,
    /// Fraction of patterns whose queries all end closest to their own pattern.
    pub stored_fraction: f64,
    pub mean_pairwise_distance: f64,
    /// Fraction of queries that met the tolerance.
    pub converged_fraction: f64,
    pub normalization: String,
}

/// Mean pairwise Euclidean distance over distinct pattern pairs.
pub fn mean_pairwise_distance(p: &PatternSet) -> f64 {
    let n = p.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += dist(p.pattern(i), p.pattern(j));
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Patterns on the sphere, perturbed queries `xₙ + s·ξ` with `ξ ~ N(0, I/D)`
/// run through mean-shift, and the resulting distance ratios.
pub fn retrieval_experiment(cfg: &RetrievalConfig) -> Result<RetrievalReport> {
    if cfg.d == 0 || cfg.n == 0 || cfg.queries_per_pattern == 0 {
        return Err(Error::invalid("D, N and queries per pattern must be positive"));
    }
    if !(cfg.sigma > 0.0) || !(cfg.perturbation >= 0.0) {
        return Err(Error::invalid("sigma must be positive and perturbation nonnegative"));
    }
    let m = cfg.radius();
    let mut rng = Rng::new(cfg.seed);
    let p = sphere_sample_with(&mut rng, cfg.d, m, cfg.n)?;
    let scale = cfg.perturbation / math::sqrt(cfg.d as f64);
    let mut ratio_a = 0.0;
    let mut ratio_a_count = 0usize;
    let mut final_dist = 0.0;
    let mut converged = 0usize;
    let mut stored = 0usize;
    for i in 0..cfg.n {
        let xi = p.pattern(i);
        let mut all_own = true;
        for _ in 0..cfg.queries_per_pattern {
            let q: Vec<f64> = xi.iter().map(|&v| v + scale * rng.normal()).collect();
            let d0 = dist(&q, xi);
            let (x, ok) = mean_shift(&p, cfg.sigma, &q, cfg.tol, cfg.max_iter)?;
            converged += ok as usize;
            let d1 = dist(&x, xi);
            final_dist += d1;
            if d0 > 0.0 {
                ratio_a += d1 / d0;
                ratio_a_count += 1;
            }
            let nearest = (0..cfg.n)
                .map(|j| sq_dist(&x, p.pattern(j)))
                .enumerate()
                .fold((0, f64::INFINITY), |b, (j, d)| if d < b.1 { (j, d) } else { b })
                .0;
            all_own &= nearest == i;
        }
        stored += all_own as usize;
    }
    let total = (cfg.n * cfg.queries_per_pattern) as f64;
    let mpd = mean_pairwise_distance(&p);
    let mean_final = final_dist / total;
    Ok(RetrievalReport {
        d: cfg.d,
        n: cfg.n,
        m,
        sigma: cfg.sigma,
        seed: cfg.seed,
        ratio_a: if ratio_a_count > 0 { ratio_a / ratio_a_count as f64 } else { 0.0 },
        ratio_b: if mpd > 0.0 { mean_final / mpd } else { mean_final },
        stored_fraction: stored as f64 / cfg.n as f64,
        mean_pairwise_distance: mpd,
        converged_fraction: converged as f64 / total,
        normalization: "ratio_b = mean final query-pattern distance / mean pairwise pattern distance".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_examples() {
        let two = PatternSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(separation(&two).unwrap(), [2.0, 2.0]);
        let g = 0.3;
        let line = PatternSet::from_rows(&[vec![0.0], vec![g], vec![2.0 * g]]).unwrap();
        for s in separation(&line).unwrap() {
            assert!((s - g * g / 2.0).abs() < 1e-15);
        }
        assert!(separation(&PatternSet::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn radius_examples() {
        assert_eq!(radius_of_convergence(1.0, 4, 2.0).unwrap(), 0.125);
        let r1 = radius_of_convergence(0.7, 5, 1.3).unwrap();
        let r2 = radius_of_convergence(1.4, 5, 1.3).unwrap();
        assert!((r2 - 4.0 * r1).abs() < 1e-15);
        let m = 2.0 * 2f64.sqrt();
        let r = radius_of_convergence(1.0, 16, m).unwrap();
        assert!((r - 1.0 / (16.0 * m)).abs() < 1e-16);
        assert!(radius_of_convergence(0.0, 1, 1.0).is_err());
        assert!(radius_of_convergence(1.0, 0, 1.0).is_err());
    }

    #[test]
    fn well_separated_examples() {
        let anti = PatternSet::from_rows(&[vec![10.0, 0.0], vec![-10.0, 0.0]]).unwrap();
        assert!(well_separated(&anti, 1.0).unwrap().holds);
        let dup = PatternSet::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(!well_separated(&dup, 1.0).unwrap().holds);
        let b = separation_bound(1.0, 2, 3.0);
        let verdict = well_separated_from(&[b, b + 1.0], b);
        assert!(verdict.holds);
        assert_eq!(verdict.margin, 0.0);
    }

    #[test]
    fn capacity_bound_values() {
        assert_eq!(capacity_bound(2).unwrap().value, Some(4));
        assert_eq!(capacity_bound(4).unwrap().value, Some(64));
        assert_eq!(capacity_bound(32).unwrap().value, Some(1 << 62));
        let big = capacity_bound(33).unwrap();
        assert_eq!(big.value, None);
        assert_eq!(big.log2, 64);
        assert!(capacity_bound(1).is_err());
    }

    #[test]
    fn sphere_sample_norms() {
        let p = sphere_sample(5, 3.5, 200, 1).unwrap();
        assert!(p.iter().all(|x| (norm(x) - 3.5).abs() < 1e-12));
        let line = sphere_sample(1, 2.0, 50, 2).unwrap();
        assert!(line.iter().all(|x| x[0] == 2.0 || x[0] == -2.0));
    }

    #[test]
    fn single_pattern_is_stored() {
        let p = PatternSet::from_rows(&[vec![1.0, 2.0, -0.5]]).unwrap();
        let r = check_storage(&p, 1.0, 10, 1.0, 0).unwrap();
        assert!(r.all_stored());
        assert!(r.retrieval_error[0] < 1e-8);
    }

    #[test]
    fn close_patterns_merge() {
        let p = PatternSet::from_rows(&[vec![-0.25], vec![0.25]]).unwrap();
        let r = check_storage(&p, 1.0, 20, 1.0, 0).unwrap();
        assert!(!r.all_stored());
    }

    #[test]
    fn repulsion_spreads_points() {
        let a = sphere_sample(3, 1.0, 12, 5).unwrap();
        let b = repulsion_sample(3, 1.0, 12, 5, 300).unwrap();
        let min = |p: &PatternSet| separation(p).unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min(&b) > min(&a));
        assert!(b.iter().all(|x| (norm(x) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unperturbed_queries_stay_put() {
        let cfg = RetrievalConfig { d: 16, n: 8, perturbation: 0.0, queries_per_pattern: 2, ..Default::default() };
        let r = retrieval_experiment(&cfg).unwrap();
        assert!(r.ratio_b < 1e-12);
        assert_eq!(r.ratio_a, 0.0);
        assert_eq!(r.stored_fraction, 1.0);
    }
}
