//! External (label-agreement) and internal (geometry) clustering scores.
//!
//! Definitions follow the usual contingency-table and scatter formulas.
//! Scores that are undefined for the given labels come back as `None`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::check_dim;
use crate::numerics::math;
use crate::numerics::vec::{dist, sq_dist};
use crate::Result;

/// Maps labels to `0..C` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    a: Vec<usize>,
    b: Vec<usize>,
}

impl Contingency {
    fn new(truth: &[usize], pred: &[usize]) -> Result<Self> {
        check_dim(truth.len(), pred.len())?;
        let (t, ct) = compact(truth);
        let (p, cp) = compact(pred);
        let mut table = vec![vec![0usize; cp]; ct];
        for (&i, &j) in t.iter().zip(&p) {
            table[i][j] += 1;
        }
        let a = table.iter().map(|r| r.iter().sum()).collect();
        let b = (0..cp).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Contingency { n: truth.len(), table, a, b })
    }

    /// Both labelings are a single block, or both are all singletons.
    fn trivially_identical(&self) -> bool {
        let (ka, kb) = (self.a.len(), self.b.len());
        (ka == 1 && kb == 1) || (ka == self.n && kb == self.n) || self.n == 0
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.table
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &c)| (i, j, c)))
            .filter(|(_, _, c)| *c > 0)
    }
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Fraction of sample pairs on which the two labelings agree.
pub fn rand_score(truth: &[usize], pred: &[usize]) -> Result<Option<f64>> {
    let c = Contingency::new(truth, pred)?;
    if c.n < 2 {
        return Ok(Some(1.0));
    }
    let pairs = comb2(c.n);
    let sij: f64 = c.cells().map(|(_, _, v)| comb2(v)).sum();
    let sa: f64 = c.a.iter().map(|&v| comb2(v)).sum();
    let sb: f64 = c.b.iter().map(|&v| comb2(v)).sum();
    Ok(Some((pairs + 2.0 * sij - sa - sb) / pairs))
}

/// Rand index corrected for chance.
pub fn adjusted_rand(truth: &[usize], pred: &[usize]) -> Result<Option<f64>> {
    let c = Contingency::new(truth, pred)?;
    if c.trivially_identical() {
        return Ok(Some(1.0));
    }
    let pairs = comb2(c.n);
    let sij: f64 = c.cells().map(|(_, _, v)| comb2(v)).sum();
    let sa: f64 = c.a.iter().map(|&v| comb2(v)).sum();
    let sb: f64 = c.b.iter().map(|&v| comb2(v)).sum();
    let expected = sa * sb / pairs;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(None);
    }
    Ok(Some((sij - expected) / (max - expected)))
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let nf = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * math::ln(p)
        })
        .sum()
}

fn mutual_info(c: &Contingency) -> f64 {
    let n = c.n as f64;
    c.cells()
        .map(|(i, j, v)| {
            let v = v as f64;
            v / n * math::ln(v * n / (c.a[i] as f64 * c.b[j] as f64))
        })
        .sum::<f64>()
        .max(0.0)
}

/// Expected mutual information under the hypergeometric permutation model.
fn expected_mutual_info(c: &Contingency) -> f64 {
    let n = c.n;
    let nf = n as f64;
    let lg = |x: usize| math::ln_gamma(x as f64 + 1.0);
    let lg_n = lg(n);
    let mut emi = 0.0;
    for &ai in &c.a {
        for &bj in &c.b {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let nijf = nij as f64;
                let term = nijf / nf * math::ln(nf * nijf / (ai as f64 * bj as f64));
                let log_p = lg(ai) + lg(bj) + lg(n - ai) + lg(n - bj)
                    - lg_n
                    - lg(nij)
                    - lg(ai - nij)
                    - lg(bj - nij)
                    - lg(n - ai - bj + nij);
                emi += term * math::exp(log_p);
            }
        }
    }
    emi
}

/// Mutual information normalized by the arithmetic mean of the entropies.
pub fn normalized_mutual_info(truth: &[usize], pred: &[usize]) -> Result<Option<f64>> {
    let c = Contingency::new(truth, pred)?;
    if c.a.len() == 1 && c.b.len() == 1 || c.n == 0 {
        return Ok(Some(1.0));
    }
    let norm = 0.5 * (entropy(&c.a, c.n) + entropy(&c.b, c.n));
    if norm == 0.0 {
        return Ok(None);
    }
    Ok(Some(mutual_info(&c) / norm))
}

/// Mutual information adjusted for chance, arithmetic normalization.
pub fn adjusted_mutual_info(truth: &[usize], pred: &[usize]) -> Result<Option<f64>> {
    let c = Contingency::new(truth, pred)?;
    if c.trivially_identical() {
        return Ok(Some(1.0));
    }
    let mi = mutual_info(&c);
    let emi = expected_mutual_info(&c);
    let norm = 0.5 * (entropy(&c.a, c.n) + entropy(&c.b, c.n));
    let denom = norm - emi;
    if denom.abs() < f64::EPSILON {
        return Ok(None);
    }
    Ok(Some((mi - emi) / denom))
}

struct Groups {
    k: usize,
    members: Vec<Vec<usize>>,
    centroids: Vec<Vec<f64>>,
}

fn groups(features: &[f64], d: usize, labels: &[usize]) -> Result<Option<Groups>> {
    check_dim(labels.len() * d, features.len())?;
    let n = labels.len();
    let (l, k) = compact(labels);
    if k < 2 || k >= n {
        return Ok(None);
    }
    let mut members = vec![Vec::new(); k];
    for (i, &c) in l.iter().enumerate() {
        members[c].push(i);
    }
    let centroids = members
        .iter()
        .map(|m| {
            let mut c = vec![0.0; d];
            for &i in m {
                c.iter_mut().zip(&features[i * d..(i + 1) * d]).for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|a| *a /= m.len() as f64);
            c
        })
        .collect();
    Ok(Some(Groups { k, members, centroids }))
}

fn row(features: &[f64], d: usize, i: usize) -> &[f64] {
    &features[i * d..(i + 1) * d]
}

/// Ratio of between- to within-cluster dispersion, scaled by degrees of freedom.
pub fn calinski_harabasz(features: &[f64], d: usize, labels: &[usize]) -> Result<Option<f64>> {
    let Some(g) = groups(features, d, labels)? else { return Ok(None) };
    let n = labels.len();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(row(features, d, i)).for_each(|(a, b)| *a += b / n as f64);
    }
    let mut between = 0.0;
    let mut within = 0.0;
    for (m, c) in g.members.iter().zip(&g.centroids) {
        between += m.len() as f64 * sq_dist(c, &mean);
        within += m.iter().map(|&i| sq_dist(row(features, d, i), c)).sum::<f64>();
    }
    if within == 0.0 {
        return Ok(Some(1.0));
    }
    Ok(Some(between * (n - g.k) as f64 / (within * (g.k - 1) as f64)))
}

/// Mean over clusters of the worst ratio of summed spreads to centroid distance.
pub fn davies_bouldin(features: &[f64], d: usize, labels: &[usize]) -> Result<Option<f64>> {
    let Some(g) = groups(features, d, labels)? else { return Ok(None) };
    let spread: Vec<f64> = g
        .members
        .iter()
        .zip(&g.centroids)
        .map(|(m, c)| m.iter().map(|&i| dist(row(features, d, i), c)).sum::<f64>() / m.len() as f64)
        .collect();
    if spread.iter().all(|s| *s == 0.0) {
        return Ok(Some(0.0));
    }
    let mut total = 0.0;
    for i in 0..g.k {
        let mut worst = 0.0f64;
        for j in 0..g.k {
            if i == j {
                continue;
            }
            let cd = dist(&g.centroids[i], &g.centroids[j]);
            let r = if cd == 0.0 { 0.0 } else { (spread[i] + spread[j]) / cd };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(Some(total / g.k as f64))
}

/// Mean silhouette coefficient; singleton clusters score 0.
pub fn silhouette(features: &[f64], d: usize, labels: &[usize]) -> Result<Option<f64>> {
    let Some(g) = groups(features, d, labels)? else { return Ok(None) };
    let n = labels.len();
    let (l, _) = compact(labels);
    let mut total = 0.0;
    let mut sums = vec![0.0; g.k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = row(features, d, i);
        for j in 0..n {
            if j != i {
                sums[l[j]] += dist(xi, row(features, d, j));
            }
        }
        let own = g.members[l[i]].len();
        if own == 1 {
            continue;
        }
        let a = sums[l[i]] / (own - 1) as f64;
        let b = (0..g.k)
            .filter(|&c| c != l[i])
            .map(|c| sums[c] / g.members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(Some(total / n as f64))
}

/// All seven scores; supervised ones are absent without ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub rand: Option<f64>,
    pub adjusted_rand: Option<f64>,
    pub adjusted_mutual_info: Option<f64>,
    pub normalized_mutual_info: Option<f64>,
    pub calinski_harabasz: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub silhouette: Option<f64>,
}

impl MetricReport {
    pub fn compute(features: &[f64], d: usize, pred: &[usize], truth: Option<&[usize]>) -> Result<Self> {
        let mut r = MetricReport {
            calinski_harabasz: calinski_harabasz(features, d, pred)?,
            davies_bouldin: davies_bouldin(features, d, pred)?,
            silhouette: silhouette(features, d, pred)?,
            ..Default::default()
        };
        if let Some(t) = truth {
            r.rand = rand_score(t, pred)?;
            r.adjusted_rand = adjusted_rand(t, pred)?;
            r.adjusted_mutual_info = adjusted_mutual_info(t, pred)?;
            r.normalized_mutual_info = normalized_mutual_info(t, pred)?;
        }
        Ok(r)
    }
}
