//! Config loading, output directories and run records shared by every
//! subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::write_json;
use crate::error::{LabError, Result};

/// Environment variable naming the root that relative output directories
/// are resolved against.
pub const OUT_ENV: &str = "AMPROB_OUT";

/// Flags accepted by every subcommand.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for all randomness in the run; overrides the config's `seed`.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for independent grid cells.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
}

/// A parsed config plus the directory relative paths inside it refer to.
pub struct Loaded<T> {
    pub config: T,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<Loaded<T>> {
    let Some(path) = path else {
        return Ok(Loaded { config: T::default(), base: PathBuf::from(".") });
    };
    let text = std::fs::read_to_string(path).map_err(|e| LabError::config(path, e.to_string()))?;
    let config = parse_config(&text).map_err(|msg| LabError::config(path, msg))?;
    let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    Ok(Loaded { config, base })
}

/// Parses TOML text, returning the error with its line and key on failure.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    toml::from_str(text).map_err(|e| e.to_string().trim_end().replace('\n', " | "))
}

/// `--out`, else the config's `out`, else `default`. Relative paths are
/// placed under `$AMPROB_OUT` when it is set.
pub fn output_dir(flag: Option<&Path>, config: Option<&Path>, default: &str) -> PathBuf {
    let dir = flag.or(config).map_or_else(|| PathBuf::from(default), Path::to_path_buf);
    match std::env::var_os(OUT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

/// An open artifact directory. Dropping it without `finish` leaves no run record.
pub struct Run {
    pub dir: PathBuf,
    command: &'static str,
    seed: u64,
    jobs: usize,
    started: Instant,
}

impl Run {
    pub fn start(command: &'static str, dir: PathBuf, seed: u64, jobs: usize, resolved: &impl Serialize) -> Result<Run> {
        std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        write_json(&dir.join("config.json"), resolved)?;
        Ok(Run { dir, command, seed, jobs, started: Instant::now() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `run.json`, the only artifact whose content depends on the clock.
    pub fn finish(self, results: &[&str]) -> Result<()> {
        let record = serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "jobs": self.jobs,
            "config": "config.json",
            "results": results,
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        write_json(&self.path("run.json"), &record)
    }
}

pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(LabError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| LabError::Usage(format!("cannot start {jobs} workers: {e}")))
}

/// Seed of grid cell `index` under the run seed.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    mix(seed, index as u64)
}

// SplitMix64 finalizer over the pair.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, serde::Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Small {
        seed: u64,
        name: String,
    }

    #[test]
    fn unknown_keys_name_the_key_and_line() {
        let err = parse_config::<Small>("seed = 1\nnmae = \"x\"\n").unwrap_err();
        assert!(err.contains("nmae"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn missing_keys_take_defaults() {
        let s: Small = parse_config("name = \"a\"").unwrap();
        assert_eq!((s.seed, s.name.as_str()), (0, "a"));
    }

    #[test]
    fn cell_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| cell_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
