//! `capacity`: retrieval-ratio sweeps over (D, N, seed) and an optional
//! storage check on a repulsion-spread sphere set.

use std::path::PathBuf;

use amprob_core::capacity::{check_storage, repulsion_sample, retrieval_experiment, well_separated, RetrievalConfig, RetrievalReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{num, write_json, CsvOut};
use crate::error::{LabError, Result};
use crate::runner::{cell_seed, load_config, output_dir, pool, CommonArgs, Run};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub d: usize,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageSpec {
    pub d: usize,
    pub n: usize,
    pub m: f64,
    pub sigma: f64,
    pub probes: usize,
    pub probe_radius: f64,
    pub repulsion_iters: usize,
}

impl Default for StorageSpec {
    fn default() -> Self {
        StorageSpec { d: 6, n: 16, m: 10.0, sigma: 1.0, probes: 50, probe_radius: 1.0, repulsion_iters: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub cells: Vec<Cell>,
    /// Independent pattern draws per cell.
    pub seeds: usize,
    /// Sphere radius; unset means `2√(D−1)`.
    pub m: Option<f64>,
    pub sigma: f64,
    pub queries_per_pattern: usize,
    pub perturbation: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub storage: Option<StorageSpec>,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        let r = RetrievalConfig::default();
        CapacityConfig {
            seed: 0,
            out: None,
            cells: [(2, 64), (4, 64), (8, 64), (16, 64), (4, 16), (4, 256)]
                .into_iter()
                .map(|(d, n)| Cell { d, n })
                .collect(),
            seeds: 5,
            m: r.m,
            sigma: r.sigma,
            queries_per_pattern: r.queries_per_pattern,
            perturbation: r.perturbation,
            max_iter: r.max_iter,
            tol: r.tol,
            storage: None,
        }
    }
}

impl CapacityConfig {
    /// The retrieval config of cell `c` under seed index `s`. Seed index `s`
    /// uses the same pattern-draw seed in every cell.
    pub fn retrieval(&self, c: Cell, s: usize) -> RetrievalConfig {
        RetrievalConfig {
            d: c.d,
            n: c.n,
            m: self.m,
            sigma: self.sigma,
            queries_per_pattern: self.queries_per_pattern,
            perturbation: self.perturbation,
            seed: cell_seed(self.seed, s),
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

/// Per-cell means over seeds, with the standard error of `ratio_b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub d: usize,
    pub n: usize,
    pub seeds: usize,
    pub mean_ratio_a: f64,
    pub mean_ratio_b: f64,
    pub sem_ratio_b: f64,
    pub mean_stored_fraction: f64,
}

pub fn summarize(c: Cell, reports: &[RetrievalReport]) -> CellSummary {
    let k = reports.len() as f64;
    let mean = |f: fn(&RetrievalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let mb = mean(|r| r.ratio_b);
    let var = if reports.len() > 1 {
        reports.iter().map(|r| (r.ratio_b - mb).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    CellSummary {
        d: c.d,
        n: c.n,
        seeds: reports.len(),
        mean_ratio_a: mean(|r| r.ratio_a),
        mean_ratio_b: mb,
        sem_ratio_b: (var / k).sqrt(),
        mean_stored_fraction: mean(|r| r.stored_fraction),
    }
}

pub fn run(args: &CommonArgs) -> Result<()> {
    let loaded = load_config::<CapacityConfig>(args.config.as_deref())?;
    let cfgpath = args.config.clone().unwrap_or_default();
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if cfg.cells.is_empty() || cfg.seeds == 0 {
        return Err(LabError::config(&cfgpath, "cells and seeds must be non-empty"));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.cells.len()).flat_map(|c| (0..cfg.seeds).map(move |s| (c, s))).collect();
    let dir = output_dir(args.out.as_deref(), cfg.out.as_deref(), "capacity");
    let run = Run::start("capacity", dir, cfg.seed, args.jobs, &cfg)?;
    let reports: Vec<RetrievalReport> = pool(args.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| retrieval_experiment(&cfg.retrieval(cfg.cells[c], s)).map_err(LabError::from))
            .collect::<Result<_>>()
    })?;

    let mut out = CsvOut::create(
        &run.path("results.csv"),
        &["D", "N", "M", "sigma", "seed", "ratio_a", "ratio_b", "stored_fraction"],
    )?;
    for r in &reports {
        out.row([
            r.d.to_string(),
            r.n.to_string(),
            num(r.m),
            num(r.sigma),
            r.seed.to_string(),
            num(r.ratio_a),
            num(r.ratio_b),
            num(r.stored_fraction),
        ])?;
    }
    out.finish()?;

    let summaries: Vec<CellSummary> = cfg
        .cells
        .iter()
        .enumerate()
        .map(|(i, &c)| summarize(c, &reports[i * cfg.seeds..(i + 1) * cfg.seeds]))
        .collect();
    let mut out = CsvOut::create(
        &run.path("summary.csv"),
        &["D", "N", "seeds", "mean_ratio_a", "mean_ratio_b", "sem_ratio_b", "mean_stored_fraction"],
    )?;
    for s in &summaries {
        out.row([
            s.d.to_string(),
            s.n.to_string(),
            s.seeds.to_string(),
            num(s.mean_ratio_a),
            num(s.mean_ratio_b),
            num(s.sem_ratio_b),
            num(s.mean_stored_fraction),
        ])?;
    }
    out.finish()?;
    let mut files = vec!["results.csv", "summary.csv"];

    write_json(
        &run.path("summary.json"),
        &serde_json::json!({
            "headline": "ratio_b",
            "ratio_a": "mean over queries of final / initial query-pattern distance",
            "ratio_b": reports[0].normalization,
            "cells": summaries,
        }),
    )?;
    files.push("summary.json");

    if let Some(st) = &cfg.storage {
        let p = repulsion_sample(st.d, st.m, st.n, cell_seed(cfg.seed, usize::MAX), st.repulsion_iters)?;
        let ws = well_separated(&p, st.sigma)?;
        let rep = check_storage(&p, st.sigma, st.probes, st.probe_radius, cell_seed(cfg.seed, usize::MAX - 1))?;
        write_json(
            &run.path("storage.json"),
            &serde_json::json!({
                "d": st.d,
                "n": st.n,
                "m": st.m,
                "sigma": st.sigma,
                "well_separated": ws.holds,
                "margin": ws.margin,
                "bound": ws.bound,
                "all_stored": rep.all_stored(),
                "stored_fraction": rep.stored_fraction(),
                "report": rep,
            }),
        )?;
        files.push("storage.json");
    }
    run.finish(&files)
}
