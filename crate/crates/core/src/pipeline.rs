//! One place to configure and train any detector kind.

use serde::{Deserialize, Serialize};

use crate::baselines::{train_vae, train_windowed, VaeConfig, WindowedConfig};
use crate::detector::{DetectorKind, DetectorModel};
use crate::error::Result;
use crate::esp::{train_ensemble, EspConfig};
use crate::flow::{train_wm_flow, FlowTrainConfig};
use crate::rng::derive_seed;
use crate::store::Dataset;

/// Hyperparameters for every detector kind; the raw flow reuses `flow` with
/// masking switched off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub esp_single: EspConfig,
    pub esp_subtraj: EspConfig,
    pub flow: FlowTrainConfig,
    pub vae: VaeConfig,
    pub windowed: WindowedConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            esp_single: EspConfig::single_step(0),
            esp_subtraj: EspConfig::sub_trajectory(0),
            flow: FlowTrainConfig::default(),
            vae: VaeConfig::default(),
            windowed: WindowedConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults with the flow horizon matched to a dataset's `k_max`.
    pub fn for_horizon(k_max: usize) -> Self {
        let mut cfg = TrainConfig::default();
        cfg.flow.k_max = k_max;
        cfg
    }

    /// Every kind's seed derived from one run seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.esp_single.seed = derive_seed(seed, 1);
        self.esp_subtraj.seed = derive_seed(seed, 2);
        self.flow.seed = derive_seed(seed, 3);
        self.vae.seed = derive_seed(seed, 4);
        self.windowed.seed = derive_seed(seed, 5);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.esp_single.validate()?;
        self.esp_subtraj.validate()?;
        self.flow.validate()?;
        self.vae.validate()?;
        self.windowed.validate()
    }

    /// The hyperparameters `train_detector` would use for `kind`.
    pub fn echo(&self, kind: DetectorKind) -> serde_json::Value {
        let v = match kind {
            DetectorKind::EspSingle => serde_json::to_value(&self.esp_single),
            DetectorKind::EspSubtraj => serde_json::to_value(&self.esp_subtraj),
            DetectorKind::WmFlow => serde_json::to_value(&self.flow),
            DetectorKind::RawFlow => serde_json::to_value(self.flow.clone().raw()),
            DetectorKind::Vae => serde_json::to_value(&self.vae),
            DetectorKind::Windowed => serde_json::to_value(&self.windowed),
        };
        v.unwrap_or_default()
    }
}

pub fn train_detector(kind: DetectorKind, data: &Dataset, cfg: &TrainConfig) -> Result<DetectorModel> {
    Ok(match kind {
        DetectorKind::EspSingle => train_ensemble(data, &cfg.esp_single)?.into(),
        DetectorKind::EspSubtraj => train_ensemble(data, &cfg.esp_subtraj)?.into(),
        DetectorKind::WmFlow => train_wm_flow(data, &FlowTrainConfig { masking_enabled: true, ..cfg.flow.clone() })?.into(),
        DetectorKind::RawFlow => train_wm_flow(data, &cfg.flow.clone().raw())?.into(),
        DetectorKind::Vae => train_vae(data, &cfg.vae)?.into(),
        DetectorKind::Windowed => train_windowed(data, &cfg.windowed)?.into(),
    })
}
