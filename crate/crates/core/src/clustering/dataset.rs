use alloc::string::String;

use alloc::vec::Vec;

use crate::energy::PatternSet;
use crate::error::check_dim;
use crate::numerics::{math, Rng};
use crate::{Error, Result};

/// Feature matrix with optional class labels in `0..C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, n: usize, d: usize, features: Vec<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        check_dim(n * d, features.len())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features must be finite".into()));
        }
        if let Some(l) = &labels {
            check_dim(n, l.len())?;
        }
        Ok(Dataset { name: name.into(), n, d, features, labels })
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

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct classes, when labelled.
    pub fn classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let mut u = l.clone();
            u.sort_unstable();
            u.dedup();
            u.len()
        })
    }

    pub fn patterns(&self) -> PatternSet {
        PatternSet::new(self.n, self.d, self.features.clone()).expect("validated")
    }

    /// Per-column zero mean and unit (population) variance; constant
    /// columns are only centred.
    pub fn standardized(&self) -> Dataset {
        let n = self.n as f64;
        let mut out = self.features.clone();
        for j in 0..self.d {
            let mean = self.rows().map(|r| r[j]).sum::<f64>() / n;
            let var = self.rows().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
            let sd = math::sqrt(var);
            let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            for i in 0..self.n {
                let v = &mut out[i * self.d + j];
                *v = (*v - mean) * scale;
            }
        }
        Dataset { name: self.name.clone(), n: self.n, d: self.d, features: out, labels: self.labels.clone() }
    }
}

/// Isotropic Gaussian blobs: `n_per` points around each centre with standard deviation `std`.
pub fn blobs(name: &str, centers: &[Vec<f64>], n_per: usize, std: f64, seed: u64) -> Result<Dataset> {
    let d = centers.first().map_or(0, |c| c.len());
    let mut rng = Rng::new(seed);
    let mut features = Vec::with_capacity(centers.len() * n_per * d);
    let mut labels = Vec::with_capacity(centers.len() * n_per);
    for (k, c) in centers.iter().enumerate() {
        check_dim(d, c.len())?;
        for _ in 0..n_per {
            features.extend(c.iter().map(|&m| m + std * rng.normal()));
            labels.push(k);
        }
    }
    Dataset::new(name, labels.len(), d, features, Some(labels))
}

/// `k` random centres uniform in `[-box, box]^d`, then [`blobs`].
pub fn random_blobs(name: &str, k: usize, d: usize, n_per: usize, half_width: f64, std: f64, seed: u64) -> Result<Dataset> {
    let mut rng = Rng::for_stream(seed, 1);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| rng.uniform_vec(d, -half_width, half_width)).collect();
    blobs(name, &centers, n_per, std, seed)
}

/// Per-point nearest row of `centers`, lowest index on ties.
pub fn nearest(x: &[f64], centers: &[f64], d: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.chunks_exact(d).enumerate() {
        let dd = crate::numerics::vec::sq_dist(x, c);
        if dd < best.1 {
            best = (k, dd);
        }
    }
    best.0
}

