//! Run configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use fracwos_core::{BenchmarkId, TrainPlan};
use serde::{Deserialize, Serialize};

fn default_points() -> usize {
    100_000
}

fn default_repeats() -> u64 {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_one(n: &u64) -> bool {
    *n == 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fwos,
    Fnwos,
    Bfnwos,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fwos => "fwos",
            Method::Fnwos => "fnwos",
            Method::Bfnwos => "bfnwos",
        })
    }
}

/// Plain estimator settings: `N` trajectories, absorption width `eps`, step cap `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FwosSettings {
    pub n_traj: usize,
    pub eps: f64,
    pub k_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub n_list: Vec<usize>,
}

/// Everything needed to regenerate a run. Scalars come before tables so the
/// struct serializes back to valid TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    /// Number of fresh test points for error summaries.
    #[serde(default = "default_points")]
    pub n_points: usize,
    /// Independent repeats of `convergence` and `ablation`, with seeds
    /// `seed, seed + 1, ...`.
    #[serde(default = "default_repeats", skip_serializing_if = "is_one")]
    pub repeats: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// CSV of evaluation points, one point per row, replacing random test points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_file: Option<PathBuf>,
    /// Marks presets sized for a GPU-class budget.
    #[serde(default, skip_serializing_if = "is_false")]
    pub long_running: bool,
    pub benchmark: BenchmarkId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwos: Option<FwosSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSettings>,
}

/// A configuration problem, with the 1-based line it refers to when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Line of `key` inside `[table]` (or at top level for an empty table).
fn find_line(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut table_line = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == table {
                table_line = Some(i + 1);
            }
            continue;
        }
        if current != table || key.is_empty() {
            continue;
        }
        let name = line.split('=').next().unwrap_or("").trim();
        if name == key {
            return Some(i + 1);
        }
    }
    table_line
}

fn issue(table: &str, key: &str, message: impl Into<String>) -> (String, String, String) {
    (table.to_string(), key.to_string(), message.into())
}

impl RunConfig {
    /// Parses TOML text. Syntax and type errors carry their line; semantic
    /// errors are traced back to the offending key.
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| ConfigError {
            path: None,
            line: e.span().map(|s| src[..s.start].lines().count().max(1)),
            message: e.message().trim().to_string(),
        })?;
        if let Err((table, key, message)) = cfg.check() {
            return Err(ConfigError {
                path: None,
                line: find_line(src, &table, &key),
                message,
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: e.to_string(),
        })?;
        Self::parse(&src).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            ..e
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|(_, _, message)| ConfigError {
            path: None,
            line: None,
            message,
        })
    }

    fn check(&self) -> Result<(), (String, String, String)> {
        self.benchmark
            .validate()
            .map_err(|e| issue("benchmark", key_of(&e.to_string()), e.to_string()))?;
        if self.n_points == 0 {
            return Err(issue("", "n_points", "n_points must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(issue("", "repeats", "repeats must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(issue("", "workers", "workers must be at least 1"));
        }
        match self.method {
            Method::Fwos => {
                let f = self
                    .fwos
                    .as_ref()
                    .ok_or_else(|| issue("", "method", "method fwos needs an [fwos] table"))?;
                if f.n_traj == 0 {
                    return Err(issue("fwos", "n_traj", "n_traj must be at least 1"));
                }
                if !(f.eps > 0.0) {
                    return Err(issue("fwos", "eps", "eps must be positive"));
                }
                if f.k_cap == 0 {
                    return Err(issue("fwos", "k_cap", "k_cap must be at least 1"));
                }
            }
            Method::Fnwos | Method::Bfnwos => {
                let plan = self
                    .train
                    .as_ref()
                    .ok_or_else(|| issue("", "method", format!("method {} needs a [train] table", self.method)))?;
                plan.validate()
                    .map_err(|e| issue("train", key_of(&e.to_string()), e.to_string()))?;
            }
        }
        if let Some(c) = &self.convergence {
            if c.n_list.len() < 3 {
                return Err(issue("convergence", "n_list", "n_list needs at least three entries"));
            }
            if c.n_list.windows(2).any(|w| w[0] >= w[1]) || c.n_list[0] == 0 {
                return Err(issue("convergence", "n_list", "n_list must be positive and strictly ascending"));
            }
        }
        Ok(())
    }

    pub fn fwos(&self) -> anyhow::Result<&FwosSettings> {
        self.fwos.as_ref().ok_or_else(|| anyhow::anyhow!("config has no [fwos] table"))
    }

    pub fn train(&self) -> anyhow::Result<&TrainPlan> {
        self.train.as_ref().ok_or_else(|| anyhow::anyhow!("config has no [train] table"))
    }
}

/// Config key named earliest in a validation message, so the error can point
/// at its line.
fn key_of(msg: &str) -> &'static str {
    const KEYS: [(&str, &str); 23] = [
        ("boundary_fraction", "boundary_fraction"),
        ("refine_fraction", "refine_fraction"),
        ("refresh_interval", "refresh_interval"),
        ("learning_rate", "learning_rate"),
        ("half_batch", "half_batch"),
        ("iterations", "iterations"),
        ("n_traj", "n_traj"),
        ("trajectory", "n_traj"),
        ("n_init", "n_init"),
        ("k_init", "k_init"),
        ("k_cap", "k_cap"),
        ("width", "width"),
        ("depth", "depth"),
        ("beta", "beta"),
        ("eps", "eps"),
        ("alpha", "alpha"),
        ("dim", "dim"),
        ("disk", "dim"),
        ("n_max", "n_max"),
        ("l_max", "l_max"),
        ("domain", "domain"),
        ("constant", "value"),
        ("value", "value"),
    ];
    KEYS.iter()
        .filter_map(|&(word, key)| msg.find(word).map(|at| (at, key)))
        .min_by_key(|&(at, _)| at)
        .map_or("", |(_, key)| key)
}
