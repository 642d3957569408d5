//! Run configuration: defaults, JSON config files, and dotted
//! command-line overrides.
//!
//! A run is configured in three layers, later ones winning:
//! built-in defaults ← `--config file.json` ← `--set key.path=value`.
//! Merging happens structurally on the JSON tree, so a file or override
//! only has to mention the fields it changes. Unknown keys are rejected
//! rather than ignored, and value validation reports every invalid field
//! at once before any compute starts.
//!
//! The top-level `seed` is the single source of randomness for a run: it
//! drives dataset shuffling directly and is copied into `model.seed`
//! (init + SRB noise) unless the file or an override pins `model.seed`
//! explicitly.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::{load_jsonl, Graph, GraphError};
use crate::model::ModelConfig;
use crate::optim::AdamWConfig;
use crate::synthetic::{gen_synthetic, SyntheticKind};
use crate::train::TrainSettings;

/// Node-count range used when a synthetic source does not specify one.
pub const DEFAULT_NODE_RANGE: (usize, usize) = (10, 20);

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad override '{0}': expected key.path=value")]
    BadOverride(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

// ── Sections ────────────────────────────────────────────────────────────

/// Optimizer and loop hyperparameters exposed in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerSection {
    fn default() -> OptimizerSection {
        OptimizerSection { lr: 1e-3, weight_decay: 1e-5, epochs: 50, batch_size: 32 }
    }
}

/// Where graphs come from: a JSONL file or an on-the-fly synthetic spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// JSONL dataset path (one graph per line, as written by gen-data).
    pub path: Option<PathBuf>,
    /// Synthetic spec `kind:count:seed`, e.g. `degree_regression:100:7`.
    pub synthetic: Option<String>,
    /// Node-count range for synthetic generation.
    pub node_range: (usize, usize),
}

impl DataSection {
    /// Materialize the configured dataset. Source *shape* problems are
    /// caught by [`RunConfig::validate`] up front; errors here are
    /// runtime ones (missing files, corrupt lines).
    pub fn load(&self) -> Result<Vec<Graph>, GraphError> {
        match (&self.path, &self.synthetic) {
            (Some(p), None) => load_jsonl(p),
            (None, Some(spec)) => {
                let spec: SyntheticSpec = spec.parse().map_err(|e| GraphError::contract("data", e))?;
                gen_synthetic(spec.kind, spec.count, self.node_range, spec.seed)
            }
            _ => Err(GraphError::contract("data", "exactly one of data.path / data.synthetic must be set")),
        }
    }

    fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let (lo, hi) = self.node_range;
        if lo < 2 || hi < lo {
            errs.push(format!("data.node_range must satisfy 2 <= lo <= hi, got ({lo}, {hi})"));
        }
        match (&self.path, &self.synthetic) {
            (Some(_), Some(_)) => errs.push("data.path and data.synthetic are mutually exclusive".into()),
            (None, None) => errs.push("no data source: set data.path or data.synthetic".into()),
            (None, Some(spec)) => {
                if let Err(e) = spec.parse::<SyntheticSpec>() {
                    errs.push(e);
                }
            }
            (Some(_), None) => {}
        }
        errs
    }
}

impl Default for DataSection {
    fn default() -> DataSection {
        DataSection { path: None, synthetic: None, node_range: DEFAULT_NODE_RANGE }
    }
}

/// A parsed `kind:count:seed` synthetic-dataset spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub count: usize,
    pub seed: u64,
}

impl FromStr for SyntheticSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<SyntheticSpec, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [kind, count, seed] = parts.as_slice() else {
            return Err(format!("synthetic spec '{s}' must be kind:count:seed, e.g. degree_regression:100:7"));
        };
        let kind: SyntheticKind = kind.parse().map_err(|e| format!("{e}"))?;
        let count: usize = count.parse().map_err(|_| format!("synthetic count '{count}' is not a number"))?;
        let seed: u64 = seed.parse().map_err(|_| format!("synthetic seed '{seed}' is not a number"))?;
        if count == 0 {
            return Err("synthetic count must be at least 1".into());
        }
        Ok(SyntheticSpec { kind, count, seed })
    }
}

impl std::fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.count, self.seed)
    }
}

// ── Run config ──────────────────────────────────────────────────────────

/// Everything one run needs beyond its subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
    /// Output directory; every artifact lands under it.
    pub out: Option<PathBuf>,
    /// Master seed: shuffling directly, `model.seed` unless pinned.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            model: ModelConfig::default(),
            optimizer: OptimizerSection::default(),
            data: DataSection::default(),
            out: None,
            seed: 42,
        }
    }
}

impl RunConfig {
    /// Collect every invalid field (empty means valid).
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.model.validate();
        let opt = AdamWConfig { lr: self.optimizer.lr, weight_decay: self.optimizer.weight_decay, ..AdamWConfig::default() };
        errs.extend(opt.validate());
        if self.optimizer.batch_size == 0 {
            errs.push("optimizer.batch_size must be at least 1".into());
        }
        errs.extend(self.data.validate());
        errs
    }

    /// Training-loop settings derived from this config.
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            optimizer: AdamWConfig {
                lr: self.optimizer.lr,
                weight_decay: self.optimizer.weight_decay,
                ..AdamWConfig::default()
            },
            epochs: self.optimizer.epochs,
            batch_size: self.optimizer.batch_size,
            seed: self.seed,
            ..TrainSettings::default()
        }
    }
}

// ── Loading & merging ───────────────────────────────────────────────────

fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, val) = raw.split_once('=').ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if key.is_empty() || path.iter().any(String::is_empty) {
        return Err(ConfigError::BadOverride(raw.to_string()));
    }
    // Values parse as JSON when they look like JSON (numbers, booleans,
    // null, quoted strings); bare words fall back to strings.
    let value = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
    Ok((path, value))
}

fn insert_at(tree: &mut Value, path: &[String], value: Value) {
    let mut slot = tree;
    for key in &path[..path.len() - 1] {
        if !slot.is_object() {
            *slot = Value::Object(Default::default());
        }
        slot = slot
            .as_object_mut()
            .expect("just coerced to object")
            .entry(key.clone())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    if !slot.is_object() {
        *slot = Value::Object(Default::default());
    }
    slot.as_object_mut()
        .expect("just coerced to object")
        .insert(path[path.len() - 1].clone(), value);
}

/// Build a run config from defaults, an optional JSON file, and dotted
/// `key.path=value` overrides (in that order of precedence). The result
/// is fully validated; every problem is reported in one error.
pub fn load_run_config(file: Option<&Path>, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let mut tree = serde_json::to_value(RunConfig::default())?;
    let mut model_seed_pinned = false;

    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let overlay: Value = serde_json::from_str(&text)?;
        model_seed_pinned |= overlay.pointer("/model/seed").is_some();
        deep_merge(&mut tree, overlay);
    }
    for raw in sets {
        let (path, value) = parse_override(raw)?;
        model_seed_pinned |= path == ["model", "seed"];
        insert_at(&mut tree, &path, value);
    }

    if !model_seed_pinned {
        let seed = tree.get("seed").cloned().unwrap_or(Value::from(42u64));
        insert_at(&mut tree, &["model".into(), "seed".into()], seed);
    }

    let cfg: RunConfig = serde_json::from_value(tree)?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errs))
    }
}
