use serde::{Deserialize, Serialize};

use super::Episode;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero variance.
const MIN_STD: f64 = 1e-12;

/// Per-dimension affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation over `rows`; zero-variance
    /// dimensions get std 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            count += 1;
            for d in 0..dim {
                let delta = row[d] - mean[d];
                mean[d] += delta / count as f64;
                m2[d] += delta * (row[d] - mean[d]);
            }
        }
        let std = m2
            .iter()
            .map(|&m| {
                let s = if count > 0 { (m / count as f64).sqrt() } else { 0.0 };
                if s > MIN_STD {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn denormalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Normalization statistics for states and actions, fit on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub states: Standardizer,
    pub actions: Standardizer,
}

impl NormStats {
    pub fn fit(episodes: &[Episode], n_s: usize, n_a: usize) -> Self {
        NormStats {
            states: Standardizer::fit(
                episodes.iter().flat_map(|e| e.states.iter().map(Vec::as_slice)),
                n_s,
            ),
            actions: Standardizer::fit(
                episodes.iter().flat_map(|e| e.actions.iter().map(Vec::as_slice)),
                n_a,
            ),
        }
    }

    pub fn identity(n_s: usize, n_a: usize) -> Self {
        NormStats {
            states: Standardizer::identity(n_s),
            actions: Standardizer::identity(n_a),
        }
    }

    /// Normalized copies of parallel state/action blocks.
    pub fn normalize_blocks(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let s = states.iter().map(|v| self.states.normalize(v)).collect::<Result<_>>()?;
        let a = actions.iter().map(|v| self.actions.normalize(v)).collect::<Result<_>>()?;
        Ok((s, a))
    }

    pub(crate) fn check_dims(&self, n_s: usize, n_a: usize) -> Result<()> {
        for (s, expected) in [(&self.states, n_s), (&self.actions, n_a)] {
            if s.mean.len() != expected || s.std.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: s.mean.len(),
                });
            }
            if s.std.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("norm_stats std entries must be positive".into()));
            }
        }
        Ok(())
    }
}
