//! `attn-check`: the logit decomposition of pre-normalized attention on
//! random instances, with per-instance errors.

use std::path::PathBuf;

use amprob_core::attnnorm::{normalize_query, verify_identity, vmf_decompose, QueryConvention};
use amprob_core::numerics::{Rng, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{num, write_json, CsvOut};
use crate::error::{LabError, Result};
use crate::runner::{cell_seed, load_config, output_dir, pool, CommonArgs, Run};

/// Where `q̃` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    /// Layer-normalize a raw Gaussian query under `convention`.
    LayerNorm,
    /// Draw `q̃` uniformly on the unit sphere.
    UnitSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttnCheckConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub instances: usize,
    /// Inclusive ranges for the number of keys and the width.
    pub n: [usize; 2],
    pub d: [usize; 2],
    pub source: QuerySource,
    pub convention: QueryConvention,
    pub eps: f64,
    pub rms: bool,
    /// Standard deviation of keys, `γ` and `δ` entries.
    pub key_scale: f64,
    pub gamma_scale: f64,
    pub delta_scale: f64,
    pub raw_scale: f64,
}

impl Default for AttnCheckConfig {
    fn default() -> Self {
        AttnCheckConfig {
            seed: 0,
            out: None,
            instances: 1000,
            n: [1, 32],
            d: [1, 16],
            source: QuerySource::LayerNorm,
            convention: QueryConvention::UnitNorm,
            eps: 1e-5,
            rms: false,
            key_scale: 1.0,
            gamma_scale: 1.0,
            delta_scale: 0.5,
            raw_scale: 2.0,
        }
    }
}

/// Errors for one random instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceErrors {
    pub instance: usize,
    pub n: usize,
    pub d: usize,
    pub max_log_error: f64,
    pub max_posterior_error: f64,
    /// `maxᵢ |‖mᵢ‖ − 1|` over keys with `κᵢ > 0`.
    pub max_direction_norm_error: f64,
    /// `max |LN(x) − (γ ⊙ q̃ + δ)|`; zero for unit-sphere queries.
    pub max_query_error: f64,
    pub q_tilde_norm: f64,
    pub norm_warning: bool,
}

fn draw(rng: &mut Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.normal()).collect()
}

/// Draws and checks instance `i` from its own stream.
pub fn check_instance(cfg: &AttnCheckConfig, i: usize) -> amprob_core::Result<InstanceErrors> {
    let mut rng = Rng::new(cell_seed(cfg.seed, i));
    let n = cfg.n[0] + rng.below(cfg.n[1] - cfg.n[0] + 1);
    let d = cfg.d[0] + rng.below(cfg.d[1] - cfg.d[0] + 1);
    let keys = Tensor::matrix(n, d, draw(&mut rng, n * d, cfg.key_scale))?;
    let gamma = draw(&mut rng, d, cfg.gamma_scale);
    let delta = draw(&mut rng, d, cfg.delta_scale);
    let (gamma, q_tilde, max_query_error) = match cfg.source {
        QuerySource::LayerNorm => {
            let x = draw(&mut rng, d, cfg.raw_scale);
            let nq = normalize_query(&x, &gamma, &delta, cfg.eps, cfg.rms, cfg.convention)?;
            let err = (0..d)
                .map(|j| (nq.q[j] - (nq.gamma[j] * nq.q_tilde[j] + delta[j])).abs())
                .fold(0.0, f64::max);
            (nq.gamma, nq.q_tilde, err)
        }
        QuerySource::UnitSphere => {
            let mut v = draw(&mut rng, d, 1.0);
            let s = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if s > 0.0 {
                v.iter_mut().for_each(|a| *a /= s);
            } else {
                v[0] = 1.0;
            }
            (gamma, v, 0.0)
        }
    };
    let check = verify_identity(&keys, &gamma, &delta, &q_tilde)?;
    let dec = vmf_decompose(&keys, &gamma, &delta)?;
    let max_direction_norm_error = (0..n)
        .filter(|&k| !dec.degenerate[k])
        .map(|k| (dec.direction(k).iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(InstanceErrors {
        instance: i,
        n,
        d,
        max_log_error: check.max_log_error,
        max_posterior_error: check.max_posterior_error,
        max_direction_norm_error,
        max_query_error,
        q_tilde_norm: check.q_tilde_norm,
        norm_warning: check.norm_warning,
    })
}

pub fn run(args: &CommonArgs) -> Result<()> {
    let loaded = load_config::<AttnCheckConfig>(args.config.as_deref())?;
    let cfgpath = args.config.clone().unwrap_or_default();
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if cfg.instances == 0 || cfg.n[0] == 0 || cfg.d[0] == 0 || cfg.n[0] > cfg.n[1] || cfg.d[0] > cfg.d[1] {
        return Err(LabError::config(&cfgpath, "instances must be positive and n, d non-empty ranges starting at 1 or more"));
    }
    if !(cfg.eps > 0.0) {
        return Err(LabError::config(&cfgpath, "eps must be positive"));
    }
    let dir = output_dir(args.out.as_deref(), cfg.out.as_deref(), "attn-check");
    let run = Run::start("attn-check", dir, cfg.seed, args.jobs, &cfg)?;
    let rows: Vec<InstanceErrors> = pool(args.jobs)?.install(|| {
        (0..cfg.instances).into_par_iter().map(|i| check_instance(&cfg, i)).collect::<amprob_core::Result<_>>()
    })?;

    let mut out = CsvOut::create(
        &run.path("attn_check.csv"),
        &[
            "instance",
            "n",
            "d",
            "max_log_error",
            "max_posterior_error",
            "max_direction_norm_error",
            "max_query_error",
            "q_tilde_norm",
            "norm_warning",
        ],
    )?;
    for r in &rows {
        out.row([
            r.instance.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            num(r.max_log_error),
            num(r.max_posterior_error),
            num(r.max_direction_norm_error),
            num(r.max_query_error),
            num(r.q_tilde_norm),
            r.norm_warning.to_string(),
        ])?;
    }
    out.finish()?;
    let worst = |f: fn(&InstanceErrors) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    write_json(
        &run.path("summary.json"),
        &serde_json::json!({
            "instances": rows.len(),
            "convention": cfg.convention,
            "source": cfg.source,
            "max_log_error": worst(|r| r.max_log_error),
            "max_posterior_error": worst(|r| r.max_posterior_error),
            "max_direction_norm_error": worst(|r| r.max_direction_norm_error),
            "max_query_error": worst(|r| r.max_query_error),
            "norm_warnings": rows.iter().filter(|r| r.norm_warning).count(),
        }),
    )?;
    run.finish(&["attn_check.csv", "summary.json"])
}
