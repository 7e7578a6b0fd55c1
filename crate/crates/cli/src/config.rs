//! Settings. Each knob resolves as flag > environment > config file >
//! built-in default. Only `port`, `data_dir` and `seed` have environment
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sidground_core::dualtrack::DEFAULT_TTL_SECONDS;
use sidground_core::eval::stats::{DEFAULT_RESAMPLES, DEFAULT_SEED};
use sidground_core::matcher::{DEFAULT_DELTA, DEFAULT_K};
use sidground_core::padr::DEFAULT_TAU;
use sidground_core::ranking::DEFAULT_LAMBDA;
use sidground_core::LAYER_SIZES;

use crate::Failure;

pub const ENV_PORT: &str = "SIDGROUND_PORT";
pub const ENV_DATA_DIR: &str = "SIDGROUND_DATA_DIR";
pub const ENV_SEED: &str = "SIDGROUND_SEED";
pub const DEFAULT_PORT: u16 = 8080;

/// Config file contents (TOML). Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub delta: Option<u32>,
    pub broadened_delta: Option<u32>,
    pub k: Option<usize>,
    pub tau: Option<usize>,
    pub lambda: Option<f64>,
    pub ttl_seconds: Option<i64>,
    pub layer_sizes: Option<[usize; 4]>,
    pub seed: Option<u64>,
    pub resamples: Option<usize>,
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub delta: u32,
    pub broadened_delta: u32,
    pub k: usize,
    pub tau: usize,
    pub lambda: f64,
    pub ttl_seconds: i64,
    pub layer_sizes: [usize; 4],
    pub seed: u64,
    pub resamples: usize,
    pub port: u16,
    pub data_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            delta: DEFAULT_DELTA,
            broadened_delta: 10,
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            ttl_seconds: DEFAULT_TTL_SECONDS,
            layer_sizes: LAYER_SIZES,
            seed: DEFAULT_SEED,
            resamples: DEFAULT_RESAMPLES,
            port: DEFAULT_PORT,
            data_dir: None,
        }
    }
}

impl Config {
    /// Defaults, then `file`, then environment looked up through `env`.
    pub fn resolve(file: FileConfig, env: impl Fn(&str) -> Option<String>) -> Result<Self, Failure> {
        let d = Config::default();
        let mut c = Config {
            delta: file.delta.unwrap_or(d.delta),
            broadened_delta: file.broadened_delta.unwrap_or(d.broadened_delta),
            k: file.k.unwrap_or(d.k),
            tau: file.tau.unwrap_or(d.tau),
            lambda: file.lambda.unwrap_or(d.lambda),
            ttl_seconds: file.ttl_seconds.unwrap_or(d.ttl_seconds),
            layer_sizes: file.layer_sizes.unwrap_or(d.layer_sizes),
            seed: file.seed.unwrap_or(d.seed),
            resamples: file.resamples.unwrap_or(d.resamples),
            port: file.port.unwrap_or(d.port),
            data_dir: file.data_dir,
        };
        if let Some(v) = env(ENV_PORT) {
            c.port = v.parse().map_err(|_| Failure::Usage(format!("{ENV_PORT}=`{v}` is not a port")))?;
        }
        if let Some(v) = env(ENV_SEED) {
            c.seed = v.parse().map_err(|_| Failure::Usage(format!("{ENV_SEED}=`{v}` is not an integer")))?;
        }
        if let Some(v) = env(ENV_DATA_DIR) {
            c.data_dir = Some(PathBuf::from(v));
        }
        Ok(c)
    }

    /// Read `path` (if given) and the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        Config::resolve(file, |k| std::env::var(k).ok().filter(|v| !v.is_empty()))
    }

    /// Relative paths are taken from the data directory when one is set.
    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}
