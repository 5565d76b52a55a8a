//! Early stopping of failing policy rollouts: trajectory storage, anomaly
//! detectors over partial episodes, evaluation metrics and a runtime monitor.

pub mod baselines;
pub mod detector;
pub mod error;
pub mod esp;
pub mod eval;
pub mod flow;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod runtime;
pub mod store;
pub mod synth;

pub use detector::{Checkpoint, Detector, DetectorKind, DetectorModel};
pub use error::{Error, Result};
pub use store::{Dataset, Episode, Label, NormStats, SubEpisode};
