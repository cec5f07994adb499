//! `cluster`: train ClAM / ClAM+ELBO and the k-means baseline on datasets,
//! then score every labeling with the seven clustering metrics.

use std::path::PathBuf;

use amprob_core::clustering::{
    assign_hard, assign_soft, kmeans, random_blobs, train_clam, train_clam_elbo, Dataset, MetricReport, TrainConfig,
};
use amprob_core::dynamics::{FlowConfig, Record};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, num, write_json, CsvOut};
use crate::error::{LabError, Result};
use crate::runner::{cell_seed, load_config, output_dir, pool, CommonArgs, Loaded, Run};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A CSV file; relative paths are resolved against the config's directory.
    Csv { path: PathBuf, name: Option<String> },
    /// Gaussian blobs around `k` centres uniform in `[-half_width, half_width]^d`.
    Blobs {
        name: String,
        k: usize,
        d: usize,
        n_per: usize,
        half_width: f64,
        std: f64,
        /// Defaults to a seed derived from the run seed and the dataset index.
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    /// ClAM; labels from the memory nearest each point's fixed point.
    Clam,
    /// ClAM+ELBO; labels from the posterior argmax.
    ClamElbo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Clam => "clam",
            Method::ClamElbo => "clam_elbo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<Method>,
    /// Per-column zero mean, unit variance before anything else.
    pub standardize: bool,
    /// Cluster count; defaults to each dataset's number of classes.
    pub k: Option<usize>,
    pub kmeans_restarts: usize,
    /// ClAM settings; `k` and `seed` are filled in per cell.
    pub train: TrainConfig,
    /// β values to sweep; empty means `train.beta` only.
    pub betas: Vec<f64>,
    /// Dynamics used for hard assignment.
    pub assign_flow: FlowConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            seed: 0,
            out: None,
            datasets: vec![DatasetSpec::Csv { path: "data/iris.csv".into(), name: None }],
            methods: vec![Method::Kmeans, Method::Clam, Method::ClamElbo],
            standardize: true,
            k: None,
            kmeans_restarts: 10,
            train: TrainConfig { restarts: 10, ..TrainConfig::default() },
            betas: Vec::new(),
            assign_flow: default_assign_flow(),
        }
    }
}

pub fn default_assign_flow() -> FlowConfig {
    FlowConfig { dt: 0.1, max_steps: 5000, tol: 1e-8, backtracking: true, record: Record::Endpoints, max_dt: None }
}

/// Outcome of one (dataset, method, β) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub labels: Vec<usize>,
    pub metrics: MetricReport,
    pub final_loss: Option<f64>,
    /// Fraction of hard-assignment rollouts that met the tolerance.
    pub converged_fraction: Option<f64>,
}

/// Trains (if needed) and labels `data` with `method`. `train.k` and
/// `train.seed` are used as given.
pub fn run_method(
    data: &Dataset,
    method: Method,
    train: &TrainConfig,
    kmeans_restarts: usize,
    flow: &FlowConfig,
) -> amprob_core::Result<CellResult> {
    let (labels, final_loss, converged_fraction) = match method {
        Method::Kmeans => (kmeans(data.features(), data.dim(), train.k, kmeans_restarts, train.seed)?.labels, None, None),
        Method::Clam => {
            let r = train_clam(data, train)?;
            let a = assign_hard(&r.model, data, flow)?;
            let conv = a.converged.iter().filter(|c| **c).count() as f64 / a.converged.len() as f64;
            (a.labels, Some(r.final_loss()), Some(conv))
        }
        Method::ClamElbo => {
            let r = train_clam_elbo(data, train)?;
            (assign_soft(&r.model, data)?, Some(r.final_loss()), None)
        }
    };
    let metrics = MetricReport::compute(data.features(), data.dim(), &labels, data.labels())?;
    Ok(CellResult { labels, metrics, final_loss, converged_fraction })
}

fn load_dataset(loaded: &Loaded<ClusterConfig>, i: usize, spec: &DatasetSpec) -> Result<Dataset> {
    let cfg = &loaded.config;
    let mut ds = match spec {
        DatasetSpec::Csv { path, name } => {
            let mut ds = load_csv(&loaded.resolve(path))?;
            if let Some(n) = name {
                ds.name = n.clone();
            }
            ds
        }
        DatasetSpec::Blobs { name, k, d, n_per, half_width, std, seed } => {
            let s = seed.unwrap_or_else(|| cell_seed(cfg.seed, i));
            random_blobs(name, *k, *d, *n_per, *half_width, *std, s)?
        }
    };
    if cfg.standardize {
        ds = ds.standardized();
    }
    Ok(ds)
}

struct Cell {
    dataset: usize,
    method: Method,
    beta: Option<f64>,
}

pub fn run(args: &CommonArgs) -> Result<()> {
    let mut loaded = load_config::<ClusterConfig>(args.config.as_deref())?;
    if let Some(s) = args.seed {
        loaded.config.seed = s;
    }
    let cfgpath = args.config.clone().unwrap_or_default();
    let cfg = &loaded.config;
    if cfg.datasets.is_empty() || cfg.methods.is_empty() {
        return Err(LabError::config(&cfgpath, "datasets and methods must be non-empty"));
    }
    if cfg.kmeans_restarts == 0 {
        return Err(LabError::config(&cfgpath, "kmeans_restarts must be at least 1"));
    }
    cfg.assign_flow.validate().map_err(|e| LabError::config(&cfgpath, format!("assign_flow: {e}")))?;
    let datasets: Vec<Dataset> =
        cfg.datasets.iter().enumerate().map(|(i, s)| load_dataset(&loaded, i, s)).collect::<Result<_>>()?;
    let mut ks = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let k = cfg.k.or(ds.classes()).ok_or_else(|| {
            LabError::config(&cfgpath, format!("dataset {} has no labels; set `k`", ds.name))
        })?;
        ks.push(k);
    }
    let betas: Vec<f64> = if cfg.betas.is_empty() { vec![cfg.train.beta] } else { cfg.betas.clone() };
    let mut cells = Vec::new();
    for d in 0..datasets.len() {
        for &method in &cfg.methods {
            if method == Method::Kmeans {
                cells.push(Cell { dataset: d, method, beta: None });
            } else {
                cells.extend(betas.iter().map(|&b| Cell { dataset: d, method, beta: Some(b) }));
            }
        }
    }

    let dir = output_dir(args.out.as_deref(), cfg.out.as_deref(), "cluster");
    let run = Run::start("cluster", dir, cfg.seed, args.jobs, cfg)?;
    let results: Vec<CellResult> = pool(args.jobs)?.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let train = TrainConfig {
                    k: ks[c.dataset],
                    seed: cfg.seed,
                    beta: c.beta.unwrap_or(cfg.train.beta),
                    ..cfg.train.clone()
                };
                run_method(&datasets[c.dataset], c.method, &train, cfg.kmeans_restarts, &cfg.assign_flow)
                    .map_err(LabError::from)
            })
            .collect::<Result<_>>()
    })?;

    let metric_names =
        ["rand", "adjusted_rand", "adjusted_mutual_info", "normalized_mutual_info", "calinski_harabasz", "davies_bouldin", "silhouette"];
    let mut header = vec!["dataset", "method", "beta", "k", "final_loss"];
    header.extend(metric_names);
    let mut summary = CsvOut::create(&run.path("summary.csv"), &header)?;
    let mut files = vec!["summary.csv".to_string()];
    for (c, r) in cells.iter().zip(&results) {
        let ds = &datasets[c.dataset];
        let stem = match c.beta {
            Some(b) if betas.len() > 1 => format!("{}_{}_beta{}", ds.name, c.method.name(), b),
            _ => format!("{}_{}", ds.name, c.method.name()),
        };
        let mut record = serde_json::to_value(&r.metrics)?;
        let obj = record.as_object_mut().expect("struct serializes to an object");
        obj.insert("dataset".into(), ds.name.clone().into());
        obj.insert("method".into(), c.method.name().into());
        obj.insert("beta".into(), c.beta.into());
        obj.insert("k".into(), ks[c.dataset].into());
        obj.insert("n".into(), ds.len().into());
        obj.insert("final_loss".into(), r.final_loss.into());
        obj.insert("converged_fraction".into(), r.converged_fraction.into());
        let name = format!("metrics_{stem}.json");
        write_json(&run.path(&name), &record)?;
        files.push(name);

        let name = format!("labels_{stem}.csv");
        let mut out = CsvOut::create(&run.path(&name), &["index", "label", "pred"])?;
        for (i, p) in r.labels.iter().enumerate() {
            let truth = ds.labels().map_or_else(String::new, |l| l[i].to_string());
            out.row([i.to_string(), truth, p.to_string()])?;
        }
        out.finish()?;
        files.push(name);

        let m = &r.metrics;
        let opt = |v: Option<f64>| v.map_or_else(String::new, num);
        let mut row = vec![
            ds.name.clone(),
            c.method.name().to_string(),
            opt(c.beta),
            ks[c.dataset].to_string(),
            opt(r.final_loss),
        ];
        for v in [
            m.rand,
            m.adjusted_rand,
            m.adjusted_mutual_info,
            m.normalized_mutual_info,
            m.calinski_harabasz,
            m.davies_bouldin,
            m.silhouette,
        ] {
            row.push(opt(v));
        }
        summary.row(row)?;
    }
    summary.finish()?;
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    run.finish(&names)
}
