//! Likelihood detector: an affine-coupling normalizing flow over fixed-length
//! `(state, action)` tensors, trained with prefix masking and length-based
//! sample weighting.
//!
//! A sub-episode of `K_len` steps is laid out as a `k_max x (N_s + N_a)`
//! time-major tensor. Steps at or after `K_len` are zero and a separate
//! validity mask (1 for kept steps) is fed to every conditioner; only the data
//! dimensions pass through the bijection.
//!
//! Each coupling layer splits the data dimensions by channel parity,
//! alternating between layers. The kept half `x_a` (plus the mask) drives a
//! conditioner that emits a bounded log-scale `s` and a shift `t` for the
//! other half: `y_b = x_b * exp(s) + t`. The negative log-likelihood under a
//! standard-normal base is `0.5 |z|^2 + 0.5 d ln(2 pi) - sum s`; it is both the
//! training loss and the anomaly score.
//!
//! Masked training draws `K_len ~ U{K_min, .., min(T, K_max)}` per sample and
//! weights its gradient by `w = max(sqrt((K_len - K_min) / (K_max - K_min)), w_0)`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, Network, Optimizer, OptimizerConfig, OptimizerKind, Trace};
use crate::rng::seeded;
use crate::store::{Dataset, Episode, NormStats, SubEpisode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTrainConfig {
    /// Step size (gamma).
    pub learning_rate: f64,
    /// Passes over the training episodes (N_E); one masked draw per episode per pass.
    pub epochs: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Weight floor (w_0).
    pub w0: f64,
    /// `false` trains on complete episodes with unit weight.
    pub masking_enabled: bool,
    pub seed: u64,
    pub coupling_layers: usize,
    pub hidden: usize,
    /// Log-scales are squashed to `(-scale_bound, scale_bound)`.
    pub scale_bound: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            learning_rate: 8e-4,
            epochs: 85,
            k_min: 1,
            k_max: 200,
            w0: 0.1,
            masking_enabled: true,
            seed: 0,
            coupling_layers: 8,
            hidden: 48,
            scale_bound: 3.0,
            batch_size: 8,
            optimizer: OptimizerKind::adam(),
            clip_norm: Some(100.0),
        }
    }
}

impl FlowTrainConfig {
    pub fn raw(self) -> Self {
        FlowTrainConfig {
            masking_enabled: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.k_min && self.k_min < self.k_max) {
            return Err(Error::Config(format!(
                "need 1 <= k_min < k_max, got k_min={} k_max={}",
                self.k_min, self.k_max
            )));
        }
        if !(self.w0 > 0.0 && self.w0 <= 1.0) {
            return Err(Error::Config(format!("w0 must be in (0, 1], got {}", self.w0)));
        }
        if self.coupling_layers == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("coupling_layers, hidden and batch_size must be positive".into()));
        }
        if !(self.scale_bound > 0.0 && self.scale_bound.is_finite()) {
            return Err(Error::Config("scale_bound must be positive".into()));
        }
        self.optimizer_config().validate()
    }

    fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
        }
    }
}

/// `max(sqrt((k_len - k_min) / (k_max - k_min)), w0)`.
pub fn sample_weight(k_len: usize, k_min: usize, k_max: usize, w0: f64) -> Result<f64> {
    if k_min >= k_max || k_len < k_min || k_len > k_max {
        return Err(Error::OutOfRange {
            what: "sub-episode length",
            value: k_len,
            min: k_min,
            max: k_max,
        });
    }
    let ratio = (k_len - k_min) as f64 / (k_max - k_min) as f64;
    Ok(ratio.sqrt().max(w0))
}

/// Weight of a `k_len`-step draw from an episode of length `len`: the episode's
/// own length (capped at `k_max`) is the "complete" reference.
fn episode_weight(k_len: usize, len: usize, cfg: &FlowTrainConfig) -> f64 {
    let reference = len.min(cfg.k_max);
    if reference <= cfg.k_min {
        return 1.0;
    }
    sample_weight(k_len, cfg.k_min, reference, cfg.w0)
        .expect("k_len drawn inside [k_min, reference]")
        .min(1.0)
}

/// A sub-episode laid out for the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSample {
    /// `k_max x channels`, time-major; zero from step `k_len` on.
    pub data: Vec<f64>,
    /// `k_max` entries, 1 for kept steps.
    pub mask: Vec<f64>,
}

impl MaskedSample {
    /// Lays out the leading `k_len` steps of (already normalized) blocks.
    pub fn from_blocks(states: &[Vec<f64>], actions: &[Vec<f64>], k_len: usize, k_max: usize) -> Result<Self> {
        let available = states.len().min(actions.len());
        let upper = available.min(k_max);
        if k_len == 0 || k_len > upper {
            return Err(Error::OutOfRange {
                what: "sub-episode length",
                value: k_len,
                min: 1,
                max: upper,
            });
        }
        let n_s = states[0].len();
        let n_a = actions[0].len();
        let channels = n_s + n_a;
        let mut data = vec![0.0; k_max * channels];
        let mut mask = vec![0.0; k_max];
        for t in 0..k_len {
            let row = &mut data[t * channels..(t + 1) * channels];
            row[..n_s].copy_from_slice(&states[t]);
            row[n_s..].copy_from_slice(&actions[t]);
            mask[t] = 1.0;
        }
        Ok(MaskedSample { data, mask })
    }
}

/// Keeps the first `k_len` steps of a normalized episode and zeroes the rest
/// of a `k_max`-step tensor.
pub fn mask_subepisode(episode: &Episode, k_len: usize, k_max: usize) -> Result<MaskedSample> {
    MaskedSample::from_blocks(&episode.states, &episode.actions, k_len, k_max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    /// Channels with `channel % 2 == parity` are kept; the rest are transformed.
    pub parity: usize,
    pub conditioner: Network,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowModel {
    pub config: FlowTrainConfig,
    pub n_s: usize,
    pub n_a: usize,
    pub k_max: usize,
    pub layers: Vec<CouplingLayer>,
    pub norm_stats: NormStats,
    /// Mean weighted loss per epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

struct Partition {
    kept: Vec<usize>,
    moved: Vec<usize>,
}

impl Partition {
    fn new(dim: usize, channels: usize, parity: usize) -> Self {
        let (kept, moved) = (0..dim).partition(|i| (i % channels) % 2 == parity);
        Partition { kept, moved }
    }
}

struct LayerCache {
    input: Vec<f64>,
    trace: Trace,
    /// `tanh(raw / bound)` per moved dimension.
    squash: Vec<f64>,
    scale: Vec<f64>,
    gate: Vec<f64>,
}

impl FlowModel {
    /// Flow with randomly initialized hidden layers and zeroed output layers,
    /// so it starts as the identity map.
    pub fn new(config: FlowTrainConfig, n_s: usize, n_a: usize, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let channels = n_s + n_a;
        if channels < 2 {
            return Err(Error::Config("flow needs at least two data channels".into()));
        }
        let d = config.k_max * channels;
        let mut rng = seeded(config.seed);
        let layers = (0..config.coupling_layers)
            .map(|l| {
                let parity = l % 2;
                let part = Partition::new(d, channels, parity);
                let mut net = Network::mlp(
                    &[part.kept.len() + config.k_max, config.hidden, config.hidden, 2 * part.moved.len()],
                    Activation::Tanh,
                )?;
                net.init_uniform(&mut rng);
                net.zero_output_layer();
                Ok(CouplingLayer {
                    parity,
                    conditioner: net,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowModel {
            k_max: config.k_max,
            config,
            n_s,
            n_a,
            layers,
            norm_stats,
            loss_history: Vec::new(),
        })
    }

    pub fn channels(&self) -> usize {
        self.n_s + self.n_a
    }

    /// Dimension of the flowed data vector.
    pub fn dim(&self) -> usize {
        self.k_max * self.channels()
    }

    fn check(&self, x: &[f64], mask: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if mask.len() != self.k_max {
            return Err(Error::DimensionMismatch {
                expected: self.k_max,
                actual: mask.len(),
            });
        }
        Ok(())
    }

    fn conditioner_input(part: &Partition, x: &[f64], mask: &[f64]) -> Vec<f64> {
        part.kept.iter().map(|&i| x[i]).chain(mask.iter().copied()).collect()
    }

    /// Bounded log-scales; returns `(tanh(raw / bound), bound * tanh(raw / bound))`.
    fn scales(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let bound = self.config.scale_bound;
        let squash: Vec<f64> = raw.iter().map(|r| (r / bound).tanh()).collect();
        let scale = squash.iter().map(|q| bound * q).collect();
        (squash, scale)
    }

    /// Mask value of each moved dimension; padded steps pass through unchanged.
    fn gates(&self, part: &Partition, mask: &[f64]) -> Vec<f64> {
        let channels = self.channels();
        part.moved.iter().map(|&i| mask[i / channels]).collect()
    }

    /// Maps data to latent space; returns `(z, log|det J|)`.
    pub fn forward(&self, x: &[f64], mask: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x, mask)?;
        let d = self.dim();
        let mut y = x.to_vec();
        let mut logdet = 0.0;
        for layer in &self.layers {
            let part = Partition::new(d, self.channels(), layer.parity);
            let out = layer.conditioner.forward(&Self::conditioner_input(&part, &y, mask))?;
            let m = part.moved.len();
            let (_, scale) = self.scales(&out[..m]);
            let gate = self.gates(&part, mask);
            for (j, &i) in part.moved.iter().enumerate() {
                let s = gate[j] * scale[j];
                y[i] = y[i] * s.exp() + gate[j] * out[m + j];
                logdet += s;
            }
        }
        if !logdet.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow forward pass"));
        }
        Ok((y, logdet))
    }

    pub fn inverse(&self, z: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
        self.check(z, mask)?;
        let d = self.dim();
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            let part = Partition::new(d, self.channels(), layer.parity);
            let out = layer.conditioner.forward(&Self::conditioner_input(&part, &x, mask))?;
            let m = part.moved.len();
            let (_, scale) = self.scales(&out[..m]);
            let gate = self.gates(&part, mask);
            for (j, &i) in part.moved.iter().enumerate() {
                x[i] = (x[i] - gate[j] * out[m + j]) * (-gate[j] * scale[j]).exp();
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow inverse pass"));
        }
        Ok(x)
    }

    pub fn nll(&self, x: &[f64], mask: &[f64]) -> Result<f64> {
        let (z, logdet) = self.forward(x, mask)?;
        let value = base_nll(&z) - logdet;
        if !value.is_finite() {
            return Err(Error::NonFinite("negative log-likelihood"));
        }
        Ok(value)
    }

    /// Adds `weight * d(nll)/d(theta)` into `grads` (one buffer per coupling
    /// layer) and returns the unweighted nll.
    pub fn accumulate_nll_grad(&self, x: &[f64], mask: &[f64], weight: f64, grads: &mut [Vec<f64>]) -> Result<f64> {
        self.check(x, mask)?;
        let d = self.dim();
        let channels = self.channels();
        let mut y = x.to_vec();
        let mut logdet = 0.0;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let part = Partition::new(d, channels, layer.parity);
            let trace = layer
                .conditioner
                .forward_trace(&Self::conditioner_input(&part, &y, mask))?;
            let out = trace.output();
            let m = part.moved.len();
            let (squash, scale) = self.scales(&out[..m]);
            let gate = self.gates(&part, mask);
            let input = y.clone();
            for (j, &i) in part.moved.iter().enumerate() {
                let s = gate[j] * scale[j];
                y[i] = y[i] * s.exp() + gate[j] * out[m + j];
                logdet += s;
            }
            caches.push(LayerCache {
                input,
                trace,
                squash,
                scale,
                gate,
            });
        }
        let value = base_nll(&y) - logdet;
        if !value.is_finite() {
            return Err(Error::NonFinite("negative log-likelihood"));
        }

        // weighted d(nll)/dz = w z; walk the layers backwards
        let mut g: Vec<f64> = y.iter().map(|v| weight * v).collect();
        for (l, (layer, cache)) in self.layers.iter().zip(&caches).enumerate().rev() {
            let part = Partition::new(d, channels, layer.parity);
            let m = part.moved.len();
            let mut g_out = vec![0.0; 2 * m];
            let mut g_in = g.clone();
            for (j, &i) in part.moved.iter().enumerate() {
                let gate = cache.gate[j];
                let e = (gate * cache.scale[j]).exp();
                let gy = g[i];
                g_in[i] = gy * e;
                // -logdet contributes -w per log-scale
                let g_scale = gate * (gy * cache.input[i] * e - weight);
                g_out[j] = g_scale * (1.0 - cache.squash[j] * cache.squash[j]);
                g_out[m + j] = gate * gy;
            }
            let g_cond = layer.conditioner.backward(&cache.trace, &g_out, &mut grads[l]);
            // conditioner input = [x_kept, mask]; the mask carries no gradient
            for (k, &i) in part.kept.iter().enumerate() {
                g_in[i] += g_cond[k];
            }
            g = g_in;
        }
        Ok(value)
    }

    /// Draws `x = f^{-1}(z)` with `z ~ N(0, I)` for a given mask.
    pub fn sample<R: Rng + ?Sized>(&self, mask: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.inverse(&z, mask)
    }

    /// Masked tensor for a raw prefix, normalized with the training statistics.
    pub fn encode(&self, sub: &SubEpisode<'_>) -> Result<MaskedSample> {
        if sub.len() > self.k_max {
            return Err(Error::OutOfRange {
                what: "sub-episode length",
                value: sub.len(),
                min: 1,
                max: self.k_max,
            });
        }
        let (states, actions) = self.norm_stats.normalize_blocks(sub.states, sub.actions)?;
        MaskedSample::from_blocks(&states, &actions, sub.len(), self.k_max)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.conditioner.param_count()).sum()
    }
}

fn base_nll(z: &[f64]) -> f64 {
    0.5 * z.iter().map(|v| v * v).sum::<f64>() + 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

impl Detector for FlowModel {
    fn kind(&self) -> DetectorKind {
        if self.config.masking_enabled {
            DetectorKind::WmFlow
        } else {
            DetectorKind::RawFlow
        }
    }

    fn score(&self, sub: &SubEpisode<'_>) -> Result<f64> {
        let sample = self.encode(sub)?;
        self.nll(&sample.data, &sample.mask)
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).unwrap_or_default()
    }
}

/// One training draw: which episode, how many leading steps, and its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleDraw {
    pub episode: usize,
    pub k_len: usize,
    pub weight: f64,
}

/// The draws of one epoch: a shuffled pass over the episodes with a random
/// prefix length each (or the full length when masking is off).
pub fn epoch_draws<R: Rng + ?Sized>(lengths: &[usize], cfg: &FlowTrainConfig, rng: &mut R) -> Vec<SampleDraw> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|episode| {
            let len = lengths[episode].min(cfg.k_max);
            if !cfg.masking_enabled {
                return SampleDraw {
                    episode,
                    k_len: len,
                    weight: 1.0,
                };
            }
            let lo = cfg.k_min.min(len);
            let k_len = rng.random_range(lo..=len);
            SampleDraw {
                episode,
                k_len,
                weight: episode_weight(k_len, len, cfg),
            }
        })
        .collect()
}

/// Trains a flow on normal episodes (weighted-masked, or raw when masking is off).
pub fn train_wm_flow(data: &Dataset, cfg: &FlowTrainConfig) -> Result<FlowModel> {
    cfg.validate()?;
    let episodes = data.normalized_episodes()?;
    if let Some(ep) = episodes.iter().find(|e| e.len() > cfg.k_max) {
        return Err(Error::InvalidEpisode {
            id: ep.id.clone(),
            message: format!("length {} exceeds flow k_max {}", ep.len(), cfg.k_max),
        });
    }
    let mut model = FlowModel::new(cfg.clone(), data.n_s(), data.n_a(), data.norm_stats.clone())?;
    let opt_cfg = cfg.optimizer_config();
    let mut opts: Vec<Optimizer> = model
        .layers
        .iter()
        .map(|l| Optimizer::for_network(opt_cfg.clone(), &l.conditioner))
        .collect();
    let mut grads: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| vec![0.0; l.conditioner.param_count()])
        .collect();
    let lengths: Vec<usize> = episodes.iter().map(Episode::len).collect();
    let mut rng = seeded(crate::rng::derive_seed(cfg.seed, 1));
    let mut step = 0;
    for _ in 0..cfg.epochs {
        let draws = epoch_draws(&lengths, cfg, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in draws.chunks(cfg.batch_size) {
            for g in &mut grads {
                g.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for draw in batch {
                let sample = mask_subepisode(&episodes[draw.episode], draw.k_len, cfg.k_max)?;
                let loss = model
                    .accumulate_nll_grad(&sample.data, &sample.mask, draw.weight * scale, &mut grads)
                    .map_err(|_| Error::Diverged { step })?;
                epoch_loss += draw.weight * loss / draws.len() as f64;
            }
            for ((layer, opt), g) in model.layers.iter_mut().zip(&mut opts).zip(&grads) {
                opt.step(&mut layer.conditioner, g).map_err(|_| Error::Diverged { step })?;
            }
            step += 1;
        }
        model.loss_history.push(epoch_loss);
    }
    Ok(model)
}
