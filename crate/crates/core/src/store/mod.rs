//! Trajectory data model: episodes, prefixes, datasets and their normalization.

mod io;
mod norm;
mod sampling;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use norm::{NormStats, Standardizer};
pub use sampling::{sample_prefix_window, sample_training_window, TrainingWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Success,
    Failure,
}

impl Label {
    pub fn is_failure(self) -> bool {
        self == Label::Failure
    }
}

/// One trajectory. Step `t` pairs `states[t]` with `actions[t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub label: Label,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    /// Checks shape and finiteness against the expected dimensions.
    pub fn validate(&self, n_s: usize, n_a: usize) -> Result<()> {
        let fail = |message: String| Error::InvalidEpisode {
            id: self.id.clone(),
            message,
        };
        if self.states.is_empty() {
            return Err(fail("episode has no steps".into()));
        }
        if self.states.len() != self.actions.len() {
            return Err(fail(format!(
                "{} states but {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        for (t, (s, a)) in self.states.iter().zip(&self.actions).enumerate() {
            if s.len() != n_s {
                return Err(fail(format!(
                    "state {t} has dimension {}, expected {n_s}",
                    s.len()
                )));
            }
            if a.len() != n_a {
                return Err(fail(format!(
                    "action {t} has dimension {}, expected {n_a}",
                    a.len()
                )));
            }
            if s.iter().chain(a).any(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite value at step {t}")));
            }
        }
        Ok(())
    }

    pub fn as_sub(&self) -> SubEpisode<'_> {
        SubEpisode {
            parent_id: &self.id,
            states: &self.states,
            actions: &self.actions,
        }
    }

    /// The first `k_len` steps of the episode.
    pub fn prefix(&self, k_len: usize) -> Result<SubEpisode<'_>> {
        self.as_sub().prefix(k_len)
    }

    pub fn normalized(&self, stats: &NormStats) -> Result<Episode> {
        Ok(Episode {
            id: self.id.clone(),
            label: self.label,
            states: self
                .states
                .iter()
                .map(|s| stats.states.normalize(s))
                .collect::<Result<_>>()?,
            actions: self
                .actions
                .iter()
                .map(|a| stats.actions.normalize(a))
                .collect::<Result<_>>()?,
        })
    }
}

/// A borrowed view of the leading steps of an episode.
#[derive(Clone, Copy, Debug)]
pub struct SubEpisode<'a> {
    pub parent_id: &'a str,
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
}

impl<'a> SubEpisode<'a> {
    pub fn new(parent_id: &'a str, states: &'a [Vec<f64>], actions: &'a [Vec<f64>]) -> Self {
        debug_assert_eq!(states.len(), actions.len());
        SubEpisode {
            parent_id,
            states,
            actions,
        }
    }

    /// Number of retained steps.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn prefix(&self, k_len: usize) -> Result<SubEpisode<'a>> {
        if k_len == 0 || k_len > self.len() {
            return Err(Error::OutOfRange {
                what: "prefix length",
                value: k_len,
                min: 1,
                max: self.len(),
            });
        }
        Ok(SubEpisode {
            parent_id: self.parent_id,
            states: &self.states[..k_len],
            actions: &self.actions[..k_len],
        })
    }

    /// The trailing `n` steps (or all of them when shorter).
    pub fn tail(&self, n: usize) -> SubEpisode<'a> {
        let start = self.len().saturating_sub(n);
        SubEpisode {
            parent_id: self.parent_id,
            states: &self.states[start..],
            actions: &self.actions[start..],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_s: usize,
    pub n_a: usize,
    pub k_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<NormStats>,
    /// Free-form provenance (generator config, anomaly specs).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, serde_json::Value>,
}

/// An immutable collection of validated episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub episodes: Vec<Episode>,
    pub norm_stats: NormStats,
}

impl Dataset {
    /// Validates episodes and computes normalization statistics from them.
    ///
    /// `k_max` defaults to the longest episode.
    pub fn new(episodes: Vec<Episode>, k_max: Option<usize>) -> Result<Self> {
        let first = episodes.first().ok_or(Error::EmptyDataset)?;
        let (n_s, n_a) = (first.state_dim(), first.action_dim());
        let longest = episodes.iter().map(Episode::len).max().unwrap_or(0);
        let meta = DatasetMeta {
            n_s,
            n_a,
            k_max: k_max.unwrap_or(longest),
            norm_stats: None,
            annotations: BTreeMap::new(),
        };
        Self::from_parts(meta, episodes)
    }

    pub(crate) fn from_parts(meta: DatasetMeta, episodes: Vec<Episode>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if meta.n_s == 0 || meta.n_a == 0 {
            return Err(Error::Config("state and action dimensions must be >= 1".into()));
        }
        for ep in &episodes {
            ep.validate(meta.n_s, meta.n_a)?;
            if ep.len() > meta.k_max {
                return Err(Error::InvalidEpisode {
                    id: ep.id.clone(),
                    message: format!("length {} exceeds k_max {}", ep.len(), meta.k_max),
                });
            }
        }
        let norm_stats = match &meta.norm_stats {
            Some(stats) => {
                stats.check_dims(meta.n_s, meta.n_a)?;
                stats.clone()
            }
            None => NormStats::fit(&episodes, meta.n_s, meta.n_a),
        };
        Ok(Dataset {
            meta,
            episodes,
            norm_stats,
        })
    }

    pub fn n_s(&self) -> usize {
        self.meta.n_s
    }

    pub fn n_a(&self) -> usize {
        self.meta.n_a
    }

    pub fn k_max(&self) -> usize {
        self.meta.k_max
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Replaces the statistics, e.g. with the frozen training statistics for a test split.
    pub fn with_norm_stats(mut self, stats: NormStats) -> Result<Self> {
        stats.check_dims(self.n_s(), self.n_a())?;
        self.meta.norm_stats = Some(stats.clone());
        self.norm_stats = stats;
        Ok(self)
    }

    pub fn with_annotation(mut self, key: &str, value: serde_json::Value) -> Self {
        self.meta.annotations.insert(key.to_string(), value);
        self
    }

    /// Episodes mapped into normalized space with this dataset's statistics.
    pub fn normalized_episodes(&self) -> Result<Vec<Episode>> {
        self.episodes
            .iter()
            .map(|e| e.normalized(&self.norm_stats))
            .collect()
    }

    pub fn filter_label(&self, label: Label) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().filter(move |e| e.label == label)
    }

    /// Content hash over the serialized episodes (hex, 16 chars).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{}:{}:{}\n", self.meta.n_s, self.meta.n_a, self.meta.k_max));
        for ep in &self.episodes {
            hasher.update(io::episode_line(ep).as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        hex::encode(&digest[..8])
    }
}
