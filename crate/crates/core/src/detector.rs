//! The common fit-then-score contract shared by every detector, and the
//! tagged checkpoint that stores any of them.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{VaeModel, WindowedModel};
use crate::error::{Error, Result};
use crate::esp::{EnsembleModel, EspMode};
use crate::flow::FlowModel;
use crate::store::{NormStats, SubEpisode};

/// Scores prefixes of an episode; higher means more anomalous.
pub trait Detector: Send + Sync {
    fn kind(&self) -> DetectorKind;

    /// Anomaly score of a prefix given in raw (unnormalized) units.
    fn score(&self, sub: &SubEpisode<'_>) -> Result<f64>;

    /// Scores for several prefix lengths of the same episode.
    fn score_prefixes(&self, sub: &SubEpisode<'_>, lengths: &[usize]) -> Result<Vec<f64>> {
        lengths
            .iter()
            .map(|&k| self.score(&sub.prefix(k)?))
            .collect()
    }

    /// Hyperparameters echoed into reports.
    fn config_echo(&self) -> serde_json::Value;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    EspSingle,
    EspSubtraj,
    WmFlow,
    RawFlow,
    Vae,
    Windowed,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 6] = [
        DetectorKind::EspSingle,
        DetectorKind::Vae,
        DetectorKind::RawFlow,
        DetectorKind::Windowed,
        DetectorKind::EspSubtraj,
        DetectorKind::WmFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::EspSingle => "esp-single",
            DetectorKind::EspSubtraj => "esp-subtraj",
            DetectorKind::WmFlow => "wm-flow",
            DetectorKind::RawFlow => "raw-flow",
            DetectorKind::Vae => "vae",
            DetectorKind::Windowed => "windowed",
        }
    }

    /// Row label used in rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            DetectorKind::EspSingle => "Single SP",
            DetectorKind::EspSubtraj => "Sub-trajectory SP",
            DetectorKind::WmFlow => "WM Flow",
            DetectorKind::RawFlow => "Raw Flow",
            DetectorKind::Vae => "VAE",
            DetectorKind::Windowed => "Windowed AE",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown detector '{s}' (expected one of: {})",
                    DetectorKind::ALL.map(DetectorKind::as_str).join(", ")
                ))
            })
    }
}

/// Any trained detector.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "detector", content = "model", rename_all = "snake_case")]
pub enum DetectorModel {
    Ensemble(EnsembleModel),
    Flow(FlowModel),
    Vae(VaeModel),
    Windowed(WindowedModel),
}

impl DetectorModel {
    pub fn as_detector(&self) -> &dyn Detector {
        match self {
            DetectorModel::Ensemble(m) => m,
            DetectorModel::Flow(m) => m,
            DetectorModel::Vae(m) => m,
            DetectorModel::Windowed(m) => m,
        }
    }

    pub fn norm_stats(&self) -> &NormStats {
        match self {
            DetectorModel::Ensemble(m) => &m.norm_stats,
            DetectorModel::Flow(m) => &m.norm_stats,
            DetectorModel::Vae(m) => &m.norm_stats,
            DetectorModel::Windowed(m) => &m.norm_stats,
        }
    }
}

impl Detector for DetectorModel {
    fn kind(&self) -> DetectorKind {
        self.as_detector().kind()
    }

    fn score(&self, sub: &SubEpisode<'_>) -> Result<f64> {
        self.as_detector().score(sub)
    }

    fn score_prefixes(&self, sub: &SubEpisode<'_>, lengths: &[usize]) -> Result<Vec<f64>> {
        self.as_detector().score_prefixes(sub, lengths)
    }

    fn config_echo(&self) -> serde_json::Value {
        self.as_detector().config_echo()
    }
}

impl From<EnsembleModel> for DetectorModel {
    fn from(m: EnsembleModel) -> Self {
        DetectorModel::Ensemble(m)
    }
}

impl From<FlowModel> for DetectorModel {
    fn from(m: FlowModel) -> Self {
        DetectorModel::Flow(m)
    }
}

impl From<VaeModel> for DetectorModel {
    fn from(m: VaeModel) -> Self {
        DetectorModel::Vae(m)
    }
}

impl From<WindowedModel> for DetectorModel {
    fn from(m: WindowedModel) -> Self {
        DetectorModel::Windowed(m)
    }
}

pub const CHECKPOINT_FORMAT: &str = "policystop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Single-file checkpoint: version tag, detector kind, config echo and the
/// model (layer descriptors, flat parameters, normalization statistics).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: DetectorKind,
    pub config: serde_json::Value,
    #[serde(flatten)]
    pub model: DetectorModel,
}

impl Checkpoint {
    pub fn new(model: DetectorModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: model.kind(),
            config: model.config_echo(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag '{}'", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        if ckpt.kind != ckpt.model.kind() {
            return Err(Error::Checkpoint(format!(
                "header says {} but model is {}",
                ckpt.kind,
                ckpt.model.kind()
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn esp_kind(mode: EspMode) -> DetectorKind {
    match mode {
        EspMode::SingleStep => DetectorKind::EspSingle,
        EspMode::SubTrajectory => DetectorKind::EspSubtraj,
    }
}
