use alloc::vec;
use alloc::vec::Vec;

use super::dataset::nearest;
use crate::numerics::vec::sq_dist;
use crate::numerics::Rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `K × D`, row-major.
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    pub iterations: usize,
}

/// k-means++ seeding: first centre uniform, the rest with probability
/// proportional to squared distance from the chosen ones.
pub fn kmeans_plus_plus(x: &[f64], d: usize, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let n = x.len() / d;
    if k == 0 || k > n {
        return Err(Error::invalid("need 1 <= K <= N"));
    }
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(row(rng.below(n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..d])).collect();
    while centers.len() < k * d {
        let next = if d2.iter().sum::<f64>() > 0.0 { rng.weighted_index(&d2) } else { rng.below(n) };
        let c = row(next).to_vec();
        for (i, di) in d2.iter_mut().enumerate() {
            *di = di.min(sq_dist(row(i), &c));
        }
        centers.extend(c);
    }
    Ok(centers)
}

/// Lloyd iterations from k-means++ seeds, best of `restarts` by inertia.
/// An emptied cluster is reseeded at the point farthest from its centroid.
pub fn kmeans(x: &[f64], d: usize, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    if restarts == 0 {
        return Err(Error::invalid("restarts must be >= 1"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng = Rng::for_stream(seed, r as u64);
        let run = lloyd(x, d, k, kmeans_plus_plus(x, d, k, &mut rng)?, 300);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

pub fn lloyd(x: &[f64], d: usize, k: usize, mut centroids: Vec<f64>, max_iter: usize) -> KMeansResult {
    let n = x.len() / d;
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut reseeded = false;
    for it in 1..=max_iter {
        iterations = it;
        let mut changed = reseeded;
        reseeded = false;
        for i in 0..n {
            let l = nearest(row(i), &centroids, d);
            if l != labels[i] {
                labels[i] = l;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            sums[labels[i] * d..(labels[i] + 1) * d].iter_mut().zip(row(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| sq_dist(row(i), &centroids[labels[i] * d..(labels[i] + 1) * d]))
                    .enumerate()
                    .fold((0, -1.0), |b, (i, v)| if v > b.1 { (i, v) } else { b })
                    .0;
                centroids[c * d..(c + 1) * d].copy_from_slice(row(far));
                labels[far] = c;
                reseeded = true;
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(row(i), &centroids[labels[i] * d..(labels[i] + 1) * d])).sum();
    KMeansResult { labels, centroids, inertia, iterations }
}
