//! `landscape`: energy grids and descent trajectories for any 2-D zoo model.

use std::path::PathBuf;

use amprob_core::dynamics::{integrate, FlowConfig};
use amprob_core::energy::{ClamModel, EnergyModel, Hopfield, KdeModel, Kernel, Mchn, PatternSet};
use amprob_core::iclebm::{grid_of, EnergyGrid, GridSpec};
use amprob_core::latent::CrpState;
use amprob_core::numerics::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{num, write_grid, write_trajectory, CsvOut};
use crate::error::{LabError, Result};
use crate::runner::{cell_seed, load_config, output_dir, pool, CommonArgs, Run};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Hopfield {
        patterns: Vec<Vec<f64>>,
    },
    Mchn {
        patterns: Vec<Vec<f64>>,
        beta: f64,
    },
    Kde {
        patterns: Vec<Vec<f64>>,
        bandwidth: f64,
        #[serde(default = "gaussian")]
        kernel: Kernel,
    },
    Clam {
        memories: Vec<Vec<f64>>,
        beta: f64,
        #[serde(default)]
        mixing: Option<Vec<f64>>,
    },
    Crp {
        memories: Vec<Vec<f64>>,
        counts: Vec<f64>,
        alpha: f64,
        #[serde(default)]
        discount: f64,
        beta: f64,
        rho: f64,
    },
}

fn gaussian() -> Kernel {
    Kernel::Gaussian
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Crp {
            memories: vec![vec![1.5, 1.5], vec![-1.5, -1.0]],
            counts: vec![3.0, 2.0],
            alpha: 1.0,
            discount: 0.0,
            beta: 1.0,
            rho: 1.0,
        }
    }
}

type Model = Box<dyn EnergyModel + Send + Sync>;

impl ModelSpec {
    fn build(&self) -> amprob_core::Result<Model> {
        Ok(match self {
            ModelSpec::Hopfield { patterns } => Box::new(Hopfield::new(PatternSet::from_rows(patterns)?)),
            ModelSpec::Mchn { patterns, beta } => Box::new(Mchn::new(PatternSet::from_rows(patterns)?, *beta)?),
            ModelSpec::Kde { patterns, bandwidth, kernel } => {
                Box::new(KdeModel::new(PatternSet::from_rows(patterns)?, *kernel, *bandwidth)?)
            }
            ModelSpec::Clam { memories, beta, mixing } => {
                let m = ClamModel::from_rows(memories, *beta)?;
                Box::new(match mixing {
                    Some(w) => m.with_mixing(w.clone())?,
                    None => m,
                })
            }
            ModelSpec::Crp { memories, counts, alpha, discount, beta, rho } => {
                let d = memories.first().map_or(2, Vec::len);
                let flat = memories.iter().flatten().copied().collect();
                Box::new(CrpState::new(d, *alpha, *discount, *beta, *rho)?.with_clusters(flat, counts.clone())?)
            }
        })
    }

    /// Copy with the named scalar hyperparameter replaced.
    fn with_param(&self, name: &str, v: f64) -> Option<ModelSpec> {
        let mut m = self.clone();
        let slot = match (&mut m, name) {
            (ModelSpec::Mchn { beta, .. } | ModelSpec::Clam { beta, .. } | ModelSpec::Crp { beta, .. }, "beta") => beta,
            (ModelSpec::Kde { bandwidth, .. }, "bandwidth" | "sigma") => bandwidth,
            (ModelSpec::Crp { alpha, .. }, "alpha") => alpha,
            (ModelSpec::Crp { discount, .. }, "discount") => discount,
            (ModelSpec::Crp { rho, .. }, "rho") => rho,
            _ => return None,
        };
        *slot = v;
        Some(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub sweep: Option<Sweep>,
    /// Explicit starting points for descent trajectories.
    pub starts: Vec<[f64; 2]>,
    /// Extra starting points drawn uniformly over the grid rectangle.
    pub random_starts: usize,
    pub flow: FlowConfig,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            seed: 0,
            out: None,
            grid: GridSpec::default(),
            model: ModelSpec::default(),
            sweep: None,
            starts: Vec::new(),
            random_starts: 0,
            flow: FlowConfig { max_steps: 2000, ..FlowConfig::default() },
        }
    }
}

struct Cell {
    value: Option<f64>,
    grid: EnergyGrid,
    origin: f64,
    trajectories: Vec<amprob_core::dynamics::Trajectory>,
}

pub fn run(args: &CommonArgs) -> Result<()> {
    let loaded = load_config::<LandscapeConfig>(args.config.as_deref())?;
    let cfgpath = args.config.clone().unwrap_or_default();
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let bad = |msg: String| LabError::config(&cfgpath, msg);
    cfg.grid.validate().map_err(|e| bad(e.to_string()))?;
    cfg.flow.validate().map_err(|e| bad(e.to_string()))?;
    let specs: Vec<(Option<f64>, ModelSpec)> = match &cfg.sweep {
        None => vec![(None, cfg.model.clone())],
        Some(s) => s
            .values
            .iter()
            .map(|&v| {
                cfg.model
                    .with_param(&s.param, v)
                    .map(|m| (Some(v), m))
                    .ok_or_else(|| bad(format!("sweep.param: {:?} is not a parameter of this model", s.param)))
            })
            .collect::<Result<_>>()?,
    };
    let models: Vec<(Option<f64>, Model)> = specs
        .into_iter()
        .map(|(v, s)| s.build().map(|m| (v, m)).map_err(|e| bad(format!("model: {e}"))))
        .collect::<Result<_>>()?;
    if models[0].1.dim() != 2 {
        return Err(bad(format!("landscape needs a 2-D model, this one has dimension {}", models[0].1.dim())));
    }
    let mut starts = cfg.starts.clone();
    let mut rng = Rng::new(cell_seed(cfg.seed, 0));
    for _ in 0..cfg.random_starts {
        starts.push([
            rng.uniform_range(cfg.grid.x_min, cfg.grid.x_max),
            rng.uniform_range(cfg.grid.y_min, cfg.grid.y_max),
        ]);
    }
    let dir = output_dir(args.out.as_deref(), cfg.out.as_deref(), "landscape");
    let run = Run::start("landscape", dir, cfg.seed, args.jobs, &cfg)?;

    let cells: Vec<Cell> = pool(args.jobs)?.install(|| {
        models
            .par_iter()
            .map(|(value, m)| -> Result<Cell> {
                let grid = grid_of(&cfg.grid, |pts| pts.iter().map(|p| m.energy(p)).collect())?;
                let trajectories =
                    starts.iter().map(|s| integrate(m.as_ref(), s, &cfg.flow)).collect::<amprob_core::Result<_>>()?;
                Ok(Cell { value: *value, grid, origin: m.energy(&[0.0, 0.0])?, trajectories })
            })
            .collect::<Result<_>>()
    })?;

    let param = cfg.sweep.as_ref().map_or("", |s| s.param.as_str());
    let mut summary = CsvOut::create(
        &run.path("cells.csv"),
        &["cell", "param", "value", "origin_energy", "grid_min_energy", "argmin_x", "argmin_y"],
    )?;
    let mut results = vec!["cells.csv".to_string()];
    for (i, c) in cells.iter().enumerate() {
        let name = format!("grid_{i:03}.csv");
        write_grid(&run.path(&name), &c.grid)?;
        results.push(name);
        for (j, t) in c.trajectories.iter().enumerate() {
            let name = format!("trajectory_{i:03}_{j:03}.csv");
            write_trajectory(&run.path(&name), t)?;
            results.push(name);
        }
        let min = c.grid.energies.iter().copied().fold(f64::INFINITY, f64::min);
        let [ax, ay] = c.grid.argmin();
        summary.row([
            i.to_string(),
            param.to_string(),
            c.value.map_or_else(String::new, num),
            num(c.origin),
            num(min),
            num(ax),
            num(ay),
        ])?;
    }
    summary.finish()?;
    let names: Vec<&str> = results.iter().map(String::as_str).collect();
    run.finish(&names)
}
