//! Experiment configuration: one JSON document drives every stage.
//!
//! Missing keys take their defaults, unknown keys are rejected, and
//! `key.path=value` overrides are applied to the raw JSON tree before it is
//! typed, so diagnostics always name the offending path.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detector::DetectorConfig;
use crate::error::{Error, IoContext, Result};
use crate::evaluation::EvaluationOptions;
use crate::model::{Architecture, ModelVariant};
use crate::simulator::DatasetSpec;
use crate::trainer::TrainConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "THERMOSCOPE_OUTPUT";
pub const DEFAULT_OUTPUT: &str = "runs";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub length: usize,
    pub offset: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length: 10, offset: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Output root; relative paths resolve against the config file's
    /// directory. Unset means `$THERMOSCOPE_OUTPUT`, then `runs`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub dataset: DatasetSpec,
    pub window: WindowConfig,
    pub models: Vec<ModelVariant>,
    pub architecture: Architecture,
    pub trainer: TrainConfig,
    pub detector: DetectorConfig,
    pub evaluation: EvaluationOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            dataset: DatasetSpec::default(),
            window: WindowConfig::default(),
            models: ModelVariant::all().to_vec(),
            architecture: Architecture::default(),
            trainer: TrainConfig::default(),
            detector: DetectorConfig::default(),
            evaluation: EvaluationOptions::default(),
        }
    }
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{path}: {msg}")),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(|e| at("dataset", e))?;
        if self.window.length == 0 || self.window.offset == 0 {
            return Err(Error::Config("window: length and offset must be >= 1".into()));
        }
        if self.window.length >= self.dataset.render.frames {
            return Err(Error::Config(format!(
                "window.length: {} leaves no room in {} raw frames",
                self.window.length, self.dataset.render.frames
            )));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models: at least one model variant is required".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate().map_err(|e| at(&format!("models[{i}].beta"), e))?;
        }
        let mut names: Vec<String> = self.models.iter().map(ModelVariant::name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("models: duplicate model names".into()));
        }
        self.architecture.validate().map_err(|e| at("architecture", e))?;
        if self.architecture.grid() != self.dataset.render.grid {
            return Err(Error::Config(format!(
                "architecture: {}x{} does not match dataset.render.grid {}x{}",
                self.architecture.height,
                self.architecture.width,
                self.dataset.render.grid.height,
                self.dataset.render.grid.width
            )));
        }
        self.trainer.validate().map_err(|e| at("trainer", e))?;
        self.detector.validate().map_err(|e| at("detector", e))?;
        if self.evaluation.window_length != self.window.length {
            return Err(Error::Config(format!(
                "evaluation.window_length: {} differs from window.length {}",
                self.evaluation.window_length, self.window.length
            )));
        }
        Ok(())
    }

    /// Layer a JSON tree over the defaults, apply overrides, and validate.
    pub fn from_value(tree: Value, overrides: &[String]) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, tree);
        let mut tree = merged;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (or start from an empty document), apply overrides,
    /// validate, and resolve the output root.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (tree, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).ctx(|| format!("reading {}", p.display()))?;
                let tree: Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                (tree, p.parent().map(Path::to_path_buf))
            }
            None => (Value::Null, None),
        };
        let mut cfg = Self::from_value(tree, overrides)?;
        cfg.paths.output = Some(resolve_output(cfg.paths.output.take(), base.as_deref()));
        Ok(cfg)
    }

    pub fn output_root(&self) -> PathBuf {
        resolve_output(self.paths.output.clone(), None)
    }
}

/// Recursively overlay `top` on `base`; non-object values replace.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (_, Value::Null) => {}
        (slot, v) => *slot = v,
    }
}

fn resolve_output(configured: Option<PathBuf>, base: Option<&Path>) -> PathBuf {
    match configured {
        Some(p) if p.is_relative() => match base {
            Some(b) if !b.as_os_str().is_empty() => b.join(p),
            _ => p,
        },
        Some(p) => p,
        None => env::var_os(OUTPUT_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
    }
}

/// Apply `a.b.c=value` to a JSON tree. The value is read as JSON when it
/// parses, otherwise as a plain string. Array elements are addressed by
/// index (`models.2.beta=1e-4`).
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*seg).to_string(), value);
                    return Ok(());
                }
                map.entry(*seg).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::Config(format!("{}: expected an array index", segments[..=i].join(".")))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("{}: index out of range (len {len})", segments[..=i].join(".")))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Config(format!(
                    "{}: not an object",
                    segments[..i].join(".")
                )))
            }
        };
    }
    unreachable!("loop returns on the last segment")
}
