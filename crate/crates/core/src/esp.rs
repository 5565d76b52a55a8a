//! Ensemble state-prediction detector.
//!
//! `K` independently initialized predictors learn `f(S, A) = S'`, the next
//! `T_out` states after an input block. On familiar inputs the members agree;
//! away from the training data they extrapolate differently, and the spread of
//! their predictions is the anomaly score:
//!
//! ```text
//! U^l   = 1/(K-1) * sqrt( sum_i (f_i^l - mean_j f_j^l)^2 )
//! U_ESP = sum_l U^l
//! ```
//!
//! Two input modes exist. `SingleStep` feeds one state-action pair to an MLP
//! and scores a prefix by the maximum spread over its transitions.
//! `SubTrajectory` feeds the whole prefix to a CNN (right-aligned in a
//! `max_len` window with a validity-mask channel) and scores it with one
//! evaluation.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{esp_kind, Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Loss, Network, Optimizer, OptimizerConfig};
use crate::rng::{derive_seed, seeded};
use crate::store::{sample_prefix_window, sample_training_window, Dataset, Episode, NormStats, SubEpisode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EspMode {
    SingleStep,
    SubTrajectory,
}

/// How the per-dimension spread is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadConvention {
    /// `1/(K-1) * sqrt(sum of squared deviations)`
    #[default]
    Literal,
    /// `sqrt(sum of squared deviations / (K-1))`
    SampleStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EspConfig {
    pub ensemble_size: usize,
    pub mode: EspMode,
    /// Input horizon; in sub-trajectory mode the whole prefix is used instead.
    pub t_in: usize,
    pub t_out: usize,
    /// Optimization steps per member (one fresh mini-batch per member per step).
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    /// Sub-trajectory mode only: convolution channels and kernel width.
    pub conv_channels: usize,
    pub kernel: usize,
    /// Sub-trajectory input window; defaults to the dataset's `k_max`.
    #[serde(default)]
    pub max_len: Option<usize>,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub spread: SpreadConvention,
    pub seed: u64,
}

impl EspConfig {
    pub fn single_step(seed: u64) -> Self {
        EspConfig {
            ensemble_size: 5,
            mode: EspMode::SingleStep,
            t_in: 1,
            t_out: 1,
            steps: 3000,
            batch_size: 32,
            hidden: 64,
            conv_channels: 0,
            kernel: 3,
            max_len: None,
            optimizer: OptimizerConfig::adam(1e-3),
            spread: SpreadConvention::Literal,
            seed,
        }
    }

    pub fn sub_trajectory(seed: u64) -> Self {
        EspConfig {
            mode: EspMode::SubTrajectory,
            steps: 2000,
            batch_size: 16,
            hidden: 32,
            conv_channels: 8,
            ..EspConfig::single_step(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble needs at least 2 members".into()));
        }
        match self.mode {
            EspMode::SingleStep if self.t_in != 1 || self.t_out != 1 => {
                return Err(Error::Config("single_step mode requires t_in = t_out = 1".into()))
            }
            EspMode::SubTrajectory if self.t_out != 1 => {
                return Err(Error::Config("sub_trajectory mode requires t_out = 1".into()))
            }
            EspMode::SubTrajectory if self.conv_channels == 0 || self.kernel % 2 == 0 => {
                return Err(Error::Config(
                    "sub_trajectory mode needs conv_channels > 0 and an odd kernel".into(),
                ))
            }
            _ => {}
        }
        if self.steps == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("steps, batch_size and hidden must be positive".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Spread of member predictions summed over every predicted dimension.
pub fn ensemble_spread(predictions: &[Vec<f64>], convention: SpreadConvention) -> f64 {
    let k = predictions.len();
    if k < 2 {
        return 0.0;
    }
    let dims = predictions[0].len();
    let kf = k as f64;
    (0..dims)
        .map(|l| {
            // offset by the first member so identical predictions give exactly 0
            let base = predictions[0][l];
            let mean = base + predictions.iter().map(|p| p[l] - base).sum::<f64>() / kf;
            let ss: f64 = predictions.iter().map(|p| (p[l] - mean).powi(2)).sum();
            match convention {
                SpreadConvention::Literal => ss.sqrt() / (kf - 1.0),
                SpreadConvention::SampleStd => (ss / (kf - 1.0)).sqrt(),
            }
        })
        .sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub config: EspConfig,
    pub members: Vec<Network>,
    pub norm_stats: NormStats,
    pub n_s: usize,
    pub n_a: usize,
    /// Input window of the sub-trajectory network.
    pub max_len: usize,
    /// Mean training loss over the last steps, per member.
    pub final_losses: Vec<f64>,
}

impl EnsembleModel {
    /// Untrained ensemble with seed-distinct member initializations.
    pub fn init(config: EspConfig, n_s: usize, n_a: usize, max_len: usize, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let members = (0..config.ensemble_size)
            .map(|j| {
                let mut net = build_network(&config, n_s, n_a, max_len)?;
                net.init_uniform(&mut seeded(derive_seed(config.seed, 1000 + j as u64)));
                Ok(net)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel {
            final_losses: vec![f64::NAN; members.len()],
            config,
            members,
            norm_stats,
            n_s,
            n_a,
            max_len,
        })
    }

    pub fn mode(&self) -> EspMode {
        self.config.mode
    }

    /// Normalized `T_out x N_s` prediction of one member for a raw input block.
    ///
    /// Single-step mode uses the last state-action pair of the block.
    pub fn predict_future(&self, member: usize, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        let net = self.members.get(member).ok_or(Error::OutOfRange {
            what: "ensemble member",
            value: member,
            min: 0,
            max: self.members.len().saturating_sub(1),
        })?;
        let input = self.encode_raw(states, actions)?;
        net.forward(&input)
    }

    /// `U_ESP` for a raw input block.
    pub fn uncertainty(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64> {
        let input = self.encode_raw(states, actions)?;
        self.spread_of(&input)
    }

    fn spread_of(&self, input: &[f64]) -> Result<f64> {
        let preds = self
            .members
            .iter()
            .map(|m| m.forward(input))
            .collect::<Result<Vec<_>>>()?;
        Ok(ensemble_spread(&preds, self.config.spread))
    }

    fn encode_raw(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        if states.is_empty() || states.len() != actions.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len().max(1),
                actual: actions.len(),
            });
        }
        let ns: Vec<Vec<f64>> = states
            .iter()
            .map(|s| self.norm_stats.states.normalize(s))
            .collect::<Result<_>>()?;
        let na: Vec<Vec<f64>> = actions
            .iter()
            .map(|a| self.norm_stats.actions.normalize(a))
            .collect::<Result<_>>()?;
        Ok(encode_input(self.config.mode, &ns, &na, self.max_len))
    }

    /// Per-transition spreads `u_0 .. u_{L-2}` of a raw prefix of length `L`.
    pub fn step_uncertainties(&self, sub: &SubEpisode<'_>) -> Result<Vec<f64>> {
        (0..sub.len().saturating_sub(1))
            .map(|t| self.uncertainty(&sub.states[t..=t], &sub.actions[t..=t]))
            .collect()
    }
}

/// Maximum over a growing set: the single-step prefix score.
pub fn max_step_score(step_uncertainties: &[f64]) -> f64 {
    step_uncertainties.iter().copied().fold(0.0, f64::max)
}

impl Detector for EnsembleModel {
    fn kind(&self) -> DetectorKind {
        esp_kind(self.config.mode)
    }

    fn score(&self, sub: &SubEpisode<'_>) -> Result<f64> {
        match self.config.mode {
            EspMode::SingleStep => Ok(max_step_score(&self.step_uncertainties(sub)?)),
            EspMode::SubTrajectory => {
                if sub.is_empty() {
                    return Ok(0.0);
                }
                let window = sub.tail(self.max_len);
                self.uncertainty(window.states, window.actions)
            }
        }
    }

    fn score_prefixes(&self, sub: &SubEpisode<'_>, lengths: &[usize]) -> Result<Vec<f64>> {
        match self.config.mode {
            EspMode::SingleStep => {
                let longest = lengths.iter().copied().max().unwrap_or(0);
                let steps = self.step_uncertainties(&sub.prefix(longest.max(1))?)?;
                lengths
                    .iter()
                    .map(|&k| {
                        sub.prefix(k)?;
                        Ok(max_step_score(&steps[..k - 1]))
                    })
                    .collect()
            }
            EspMode::SubTrajectory => lengths.iter().map(|&k| self.score(&sub.prefix(k)?)).collect(),
        }
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).unwrap_or_default()
    }
}

fn build_network(cfg: &EspConfig, n_s: usize, n_a: usize, max_len: usize) -> Result<Network> {
    let out = cfg.t_out * n_s;
    match cfg.mode {
        EspMode::SingleStep => Network::mlp(&[n_s + n_a, cfg.hidden, cfg.hidden, out], Activation::Relu),
        EspMode::SubTrajectory => {
            let channels = n_s + n_a + 1;
            let c = cfg.conv_channels;
            Network::new(
                max_len * channels,
                vec![
                    LayerSpec::Conv1d {
                        length: max_len,
                        in_channels: channels,
                        out_channels: c,
                        kernel: cfg.kernel,
                    },
                    LayerSpec::Activation {
                        activation: Activation::Tanh,
                    },
                    LayerSpec::Conv1d {
                        length: max_len,
                        in_channels: c,
                        out_channels: c,
                        kernel: cfg.kernel,
                    },
                    LayerSpec::Activation {
                        activation: Activation::Tanh,
                    },
                    LayerSpec::Dense {
                        inputs: max_len * c,
                        outputs: cfg.hidden,
                    },
                    LayerSpec::Activation {
                        activation: Activation::Tanh,
                    },
                    LayerSpec::Dense {
                        inputs: cfg.hidden,
                        outputs: out,
                    },
                ],
            )
        }
    }
}

/// Network input for normalized blocks.
///
/// Sub-trajectory inputs keep the last `max_len` steps right-aligned: step
/// `t` of an `L`-step block lands at row `max_len - L + t` with mask 1, the
/// leading rows stay zero with mask 0.
pub fn encode_input(mode: EspMode, states: &[Vec<f64>], actions: &[Vec<f64>], max_len: usize) -> Vec<f64> {
    match mode {
        EspMode::SingleStep => {
            let s = states.last().expect("non-empty block");
            let a = actions.last().expect("non-empty block");
            s.iter().chain(a).copied().collect()
        }
        EspMode::SubTrajectory => {
            let n_s = states[0].len();
            let n_a = actions[0].len();
            let channels = n_s + n_a + 1;
            let len = states.len().min(max_len);
            let skip = states.len() - len;
            let mut x = vec![0.0; max_len * channels];
            for t in 0..len {
                let row = &mut x[(max_len - len + t) * channels..(max_len - len + t + 1) * channels];
                row[..n_s].copy_from_slice(&states[skip + t]);
                row[n_s..n_s + n_a].copy_from_slice(&actions[skip + t]);
                row[n_s + n_a] = 1.0;
            }
            x
        }
    }
}

/// Trains every member on its own stream of fresh mini-batches.
pub fn train_ensemble(data: &Dataset, cfg: &EspConfig) -> Result<EnsembleModel> {
    cfg.validate()?;
    let max_len = cfg.max_len.unwrap_or(data.k_max());
    let episodes = data.normalized_episodes()?;
    let min_len = match cfg.mode {
        EspMode::SingleStep => cfg.t_in + cfg.t_out + 1,
        EspMode::SubTrajectory => cfg.t_out + 1,
    };
    let eligible: Vec<&Episode> = episodes.iter().filter(|e| e.len() >= min_len).collect();
    let skipped = episodes.len() - eligible.len();
    if eligible.is_empty() {
        return Err(Error::EpisodeTooShort {
            id: "<all episodes>".into(),
            length: episodes.iter().map(Episode::len).max().unwrap_or(0),
            required: min_len,
        });
    }
    if skipped > 0 {
        warn!("esp: skipped {skipped} episodes shorter than {min_len} steps");
    }
    let mut model = EnsembleModel::init(cfg.clone(), data.n_s(), data.n_a(), max_len, data.norm_stats.clone())?;
    let results: Vec<Result<(Network, f64)>> = model
        .members
        .par_iter()
        .enumerate()
        .map(|(j, net)| train_member(net.clone(), &eligible, cfg, max_len, derive_seed(cfg.seed, j as u64)))
        .collect();
    for (j, r) in results.into_iter().enumerate() {
        let (net, loss) = r?;
        model.members[j] = net;
        model.final_losses[j] = loss;
    }
    Ok(model)
}

fn train_member(
    mut net: Network,
    episodes: &[&Episode],
    cfg: &EspConfig,
    max_len: usize,
    seed: u64,
) -> Result<(Network, f64)> {
    let mut rng = seeded(seed);
    let mut opt = Optimizer::for_network(cfg.optimizer.clone(), &net);
    let mut grad = vec![0.0; net.param_count()];
    let tail = (cfg.steps / 10).max(1);
    let mut tail_loss = 0.0;
    let inv_batch = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        grad.fill(0.0);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let ep = episodes[rng.random_range(0..episodes.len())];
            let window = match cfg.mode {
                EspMode::SingleStep => sample_training_window(ep, cfg.t_in, cfg.t_out, &mut rng)?,
                EspMode::SubTrajectory => sample_prefix_window(ep, cfg.t_out, max_len, &mut rng)?,
            };
            let input = encode_input(cfg.mode, window.states, window.actions, max_len);
            let target: Vec<f64> = window.targets.iter().flatten().copied().collect();
            let trace = net.forward_trace(&input)?;
            let loss = Loss::SquaredError.value(trace.output(), &target);
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            batch_loss += loss * inv_batch;
            let g = Loss::SquaredError.gradient(trace.output(), &target, inv_batch);
            net.backward(&trace, &g, &mut grad);
        }
        opt.step(&mut net, &grad)?;
        if step + tail >= cfg.steps {
            tail_loss += batch_loss / tail as f64;
        }
    }
    Ok((net, tail_loss))
}
