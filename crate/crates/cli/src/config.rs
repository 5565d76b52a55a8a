//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by `--set key.path=value` flags, then schema-checked.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use policystop_core::eval::DEFAULT_FRACTIONS;
use policystop_core::pipeline::TrainConfig;
use policystop_core::runtime::{MonitorOptions, Pooling};
use policystop_core::synth::BenchmarkConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub fractions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub target_fpr: f64,
    /// Period ends; empty means the six cutoff periods of the data horizon.
    pub periods: Vec<usize>,
    pub pooling: Pooling,
    pub options: MonitorOptions,
    /// Hand-set thresholds, one per period; skips calibration when non-empty.
    pub thresholds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gen: BenchmarkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub calibrate: CalibrateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gen: BenchmarkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig {
                fractions: DEFAULT_FRACTIONS.to_vec(),
            },
            calibrate: CalibrateConfig {
                target_fpr: 0.05,
                periods: Vec::new(),
                pooling: Pooling::Prefixes,
                options: MonitorOptions::default(),
                thresholds: Vec::new(),
            },
        }
    }
}

impl RunConfig {
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = Value::try_from(RunConfig::default()).context("serializing default config")?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let user: Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut root, Value::Table(user));
        }
        for item in overrides {
            apply_override(&mut root, item)?;
        }
        let cfg: RunConfig = root.try_into().context("config does not match the schema")?;
        cfg.train.validate()?;
        cfg.gen.synth.validate()?;
        Ok(cfg)
    }
}

/// Recursively overlays `patch` on `base`. Unknown keys are carried over so
/// the schema check reports them.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Table(b), Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_literal(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("--set expects key.path=value, got '{item}'");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("--set has an empty key segment in '{key}'");
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let Value::Table(table) = node else {
            bail!("--set {key}: '{}' is not a table", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parse_literal(raw.trim()));
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .with_context(|| format!("--set {key}: unknown config section '{}'", parts[..=i].join(".")))?;
    }
    unreachable!("loop returns on the last segment")
}
