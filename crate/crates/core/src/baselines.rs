//! Reconstruction baselines: a small convolutional VAE over whole (padded)
//! prefixes, and a sliding-window autoencoder scored by its worst window.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Network, Optimizer, OptimizerConfig};
use crate::rng::{derive_seed, seeded};
use crate::store::{Dataset, Episode, NormStats, SubEpisode};

/// Time-major `rows x (channels + 1)` tensor of the given steps, zero-padded
/// at the end, with a trailing validity-mask channel.
pub fn masked_rows(states: &[Vec<f64>], actions: &[Vec<f64>], rows: usize) -> Vec<f64> {
    let n_s = states[0].len();
    let n_a = actions[0].len();
    let width = n_s + n_a + 1;
    let mut x = vec![0.0; rows * width];
    for (t, (s, a)) in states.iter().zip(actions).take(rows).enumerate() {
        let row = &mut x[t * width..(t + 1) * width];
        row[..n_s].copy_from_slice(s);
        row[n_s..n_s + n_a].copy_from_slice(a);
        row[n_s + n_a] = 1.0;
    }
    x
}

/// Data channels only (mask dropped) of a [`masked_rows`] tensor.
fn data_target(x: &[f64], rows: usize, channels: usize) -> Vec<f64> {
    (0..rows)
        .flat_map(|t| x[t * (channels + 1)..t * (channels + 1) + channels].iter().copied())
        .collect()
}

/// Mean squared error over the first `kept` rows, and its gradient.
fn kept_mse(output: &[f64], target: &[f64], kept: usize, channels: usize, weight: f64) -> (f64, Vec<f64>) {
    let n = (kept * channels) as f64;
    let mut grad = vec![0.0; output.len()];
    let mut loss = 0.0;
    for i in 0..kept * channels {
        let diff = output[i] - target[i];
        loss += diff * diff / n;
        grad[i] = weight * 2.0 * diff / n;
    }
    (loss, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub latent: usize,
    pub hidden: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    /// KL weight.
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Input length; defaults to the dataset's `k_max`.
    #[serde(default)]
    pub max_len: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent: 8,
            hidden: 64,
            conv_channels: 8,
            kernel: 3,
            beta: 1.0,
            steps: 3000,
            batch_size: 16,
            max_len: None,
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.hidden == 0 || self.conv_channels == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config("vae needs positive widths and an odd kernel".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.max_len == Some(0) {
            return Err(Error::Config("steps, batch_size and max_len must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub n_s: usize,
    pub n_a: usize,
    pub max_len: usize,
    /// Outputs `[mean ‖ log-variance]`.
    pub encoder: Network,
    pub decoder: Network,
    pub norm_stats: NormStats,
}

/// One forward pass of the ELBO for a fixed noise draw.
struct ElboPass {
    enc: crate::nn::Trace,
    dec: crate::nn::Trace,
    mean: Vec<f64>,
    log_var: Vec<f64>,
    recon: f64,
    kl: f64,
}

impl VaeModel {
    pub fn new(config: VaeConfig, n_s: usize, n_a: usize, max_len: usize, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let c = n_s + n_a;
        let mut encoder = Network::new(
            max_len * (c + 1),
            vec![
                LayerSpec::Conv1d {
                    length: max_len,
                    in_channels: c + 1,
                    out_channels: config.conv_channels,
                    kernel: config.kernel,
                },
                LayerSpec::Activation {
                    activation: Activation::Tanh,
                },
                LayerSpec::Dense {
                    inputs: max_len * config.conv_channels,
                    outputs: config.hidden,
                },
                LayerSpec::Activation {
                    activation: Activation::Tanh,
                },
                LayerSpec::Dense {
                    inputs: config.hidden,
                    outputs: 2 * config.latent,
                },
            ],
        )?;
        let mut decoder = Network::mlp(&[config.latent, config.hidden, max_len * c], Activation::Tanh)?;
        let mut rng = seeded(config.seed);
        encoder.init_uniform(&mut rng);
        decoder.init_uniform(&mut rng);
        Ok(VaeModel {
            config,
            n_s,
            n_a,
            max_len,
            encoder,
            decoder,
            norm_stats,
        })
    }

    fn channels(&self) -> usize {
        self.n_s + self.n_a
    }

    fn elbo(&self, x: &[f64], kept: usize, noise: &[f64]) -> Result<ElboPass> {
        let latent = self.config.latent;
        let enc = self.encoder.forward_trace(x)?;
        let mean = enc.output()[..latent].to_vec();
        let log_var = enc.output()[latent..].to_vec();
        let z: Vec<f64> = (0..latent)
            .map(|i| mean[i] + (0.5 * log_var[i]).exp() * noise[i])
            .collect();
        let dec = self.decoder.forward_trace(&z)?;
        let target = data_target(x, self.max_len, self.channels());
        let (recon, _) = kept_mse(dec.output(), &target, kept, self.channels(), 1.0);
        let kl = 0.5
            * mean
                .iter()
                .zip(&log_var)
                .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
                .sum::<f64>();
        Ok(ElboPass {
            enc,
            dec,
            mean,
            log_var,
            recon,
            kl,
        })
    }

    /// `recon + beta * KL` for a fixed noise draw.
    pub fn loss(&self, x: &[f64], kept: usize, noise: &[f64]) -> Result<f64> {
        let p = self.elbo(x, kept, noise)?;
        Ok(p.recon + self.config.beta * p.kl)
    }

    /// Adds `weight * gradient` of [`VaeModel::loss`] into the encoder and
    /// decoder buffers; returns the unweighted loss.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        kept: usize,
        noise: &[f64],
        weight: f64,
        enc_grad: &mut [f64],
        dec_grad: &mut [f64],
    ) -> Result<f64> {
        let p = self.elbo(x, kept, noise)?;
        let loss = p.recon + self.config.beta * p.kl;
        if !loss.is_finite() {
            return Err(Error::NonFinite("vae loss"));
        }
        let target = data_target(x, self.max_len, self.channels());
        let (_, g_rec) = kept_mse(p.dec.output(), &target, kept, self.channels(), weight);
        let g_z = self.decoder.backward(&p.dec, &g_rec, dec_grad);
        let latent = self.config.latent;
        let beta = self.config.beta;
        let mut g_enc = vec![0.0; 2 * latent];
        for i in 0..latent {
            let sd = (0.5 * p.log_var[i]).exp();
            g_enc[i] = g_z[i] + weight * beta * p.mean[i];
            g_enc[latent + i] = g_z[i] * noise[i] * 0.5 * sd + weight * beta * 0.5 * (p.log_var[i].exp() - 1.0);
        }
        self.encoder.backward(&p.enc, &g_enc, enc_grad);
        Ok(loss)
    }

    /// Reconstruction MSE over the kept steps of a normalized prefix, decoded
    /// from the latent mean.
    pub fn reconstruction_error(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64> {
        let kept = states.len();
        if kept == 0 || kept > self.max_len {
            return Err(Error::OutOfRange {
                what: "sub-episode length",
                value: kept,
                min: 1,
                max: self.max_len,
            });
        }
        let x = masked_rows(states, actions, self.max_len);
        let enc = self.encoder.forward(&x)?;
        let out = self.decoder.forward(&enc[..self.config.latent])?;
        let target = data_target(&x, self.max_len, self.channels());
        Ok(kept_mse(&out, &target, kept, self.channels(), 1.0).0)
    }
}

impl Detector for VaeModel {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Vae
    }

    fn score(&self, sub: &SubEpisode<'_>) -> Result<f64> {
        let (s, a) = self.norm_stats.normalize_blocks(sub.states, sub.actions)?;
        self.reconstruction_error(&s, &a)
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).unwrap_or_default()
    }
}

/// Trains on random-length prefixes of normal episodes.
pub fn train_vae(data: &Dataset, cfg: &VaeConfig) -> Result<VaeModel> {
    cfg.validate()?;
    let max_len = cfg.max_len.unwrap_or(data.k_max());
    let episodes = data.normalized_episodes()?;
    let mut model = VaeModel::new(cfg.clone(), data.n_s(), data.n_a(), max_len, data.norm_stats.clone())?;
    let mut enc_opt = Optimizer::for_network(cfg.optimizer.clone(), &model.encoder);
    let mut dec_opt = Optimizer::for_network(cfg.optimizer.clone(), &model.decoder);
    let mut enc_grad = vec![0.0; model.encoder.param_count()];
    let mut dec_grad = vec![0.0; model.decoder.param_count()];
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let inv = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        enc_grad.fill(0.0);
        dec_grad.fill(0.0);
        for _ in 0..cfg.batch_size {
            let ep = &episodes[rng.random_range(0..episodes.len())];
            let kept = rng.random_range(1..=ep.len().min(max_len));
            let x = masked_rows(&ep.states[..kept], &ep.actions[..kept], max_len);
            let noise: Vec<f64> = (0..cfg.latent).map(|_| rng.sample(StandardNormal)).collect();
            model
                .accumulate_grad(&x, kept, &noise, inv, &mut enc_grad, &mut dec_grad)
                .map_err(|_| Error::Diverged { step })?;
        }
        enc_opt.step(&mut model.encoder, &enc_grad)?;
        dec_opt.step(&mut model.decoder, &dec_grad)?;
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowedConfig {
    pub window: usize,
    pub hidden: usize,
    pub bottleneck: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for WindowedConfig {
    fn default() -> Self {
        WindowedConfig {
            window: 20,
            hidden: 64,
            bottleneck: 8,
            steps: 3000,
            batch_size: 16,
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 0,
        }
    }
}

impl WindowedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden == 0 || self.bottleneck == 0 {
            return Err(Error::Config("window, hidden and bottleneck must be positive".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowedModel {
    pub config: WindowedConfig,
    pub n_s: usize,
    pub n_a: usize,
    pub net: Network,
    pub norm_stats: NormStats,
}

impl WindowedModel {
    pub fn new(config: WindowedConfig, n_s: usize, n_a: usize, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let c = n_s + n_a;
        let w = config.window;
        let mut net = Network::mlp(
            &[w * (c + 1), config.hidden, config.bottleneck, config.hidden, w * c],
            Activation::Tanh,
        )?;
        net.init_uniform(&mut seeded(config.seed));
        Ok(WindowedModel {
            config,
            n_s,
            n_a,
            net,
            norm_stats,
        })
    }

    fn channels(&self) -> usize {
        self.n_s + self.n_a
    }

    /// Reconstruction MSE of one (normalized) window of at most `W` steps;
    /// shorter windows are zero-padded and only their kept rows count.
    pub fn window_error(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64> {
        let w = self.config.window;
        let x = masked_rows(states, actions, w);
        let out = self.net.forward(&x)?;
        let target = data_target(&x, w, self.channels());
        Ok(kept_mse(&out, &target, states.len().min(w), self.channels(), 1.0).0)
    }

    /// Per-window errors of a normalized prefix: every full window, or one
    /// padded window when the prefix is shorter than `W`.
    pub fn window_errors(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        let w = self.config.window;
        if states.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if states.len() < w {
            return Ok(vec![self.window_error(states, actions)?]);
        }
        (0..=states.len() - w)
            .map(|i| self.window_error(&states[i..i + w], &actions[i..i + w]))
            .collect()
    }
}

/// Max of per-window errors.
pub fn max_window_score(errors: &[f64]) -> f64 {
    errors.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl Detector for WindowedModel {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Windowed
    }

    fn score(&self, sub: &SubEpisode<'_>) -> Result<f64> {
        let (s, a) = self.norm_stats.normalize_blocks(sub.states, sub.actions)?;
        Ok(max_window_score(&self.window_errors(&s, &a)?))
    }

    fn score_prefixes(&self, sub: &SubEpisode<'_>, lengths: &[usize]) -> Result<Vec<f64>> {
        let longest = lengths.iter().copied().max().unwrap_or(0);
        let full = sub.prefix(longest)?;
        let (s, a) = self.norm_stats.normalize_blocks(full.states, full.actions)?;
        let w = self.config.window;
        // errors[i] belongs to the window ending at step i + w
        let errors = if longest >= w {
            self.window_errors(&s, &a)?
        } else {
            Vec::new()
        };
        lengths
            .iter()
            .map(|&k| {
                if k == 0 || k > longest {
                    return Err(Error::OutOfRange {
                        what: "prefix length",
                        value: k,
                        min: 1,
                        max: longest,
                    });
                }
                if k < w {
                    self.window_error(&s[..k], &a[..k])
                } else {
                    Ok(max_window_score(&errors[..=k - w]))
                }
            })
            .collect()
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).unwrap_or_default()
    }
}

/// Trains on windows ending at a uniformly drawn step: full `W`-step windows,
/// plus the padded leading windows that short prefixes produce.
pub fn train_windowed(data: &Dataset, cfg: &WindowedConfig) -> Result<WindowedModel> {
    cfg.validate()?;
    let episodes: Vec<Episode> = data.normalized_episodes()?;
    if episodes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = WindowedModel::new(cfg.clone(), data.n_s(), data.n_a(), data.norm_stats.clone())?;
    let mut opt = Optimizer::for_network(cfg.optimizer.clone(), &model.net);
    let mut grad = vec![0.0; model.net.param_count()];
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let w = cfg.window;
    let c = model.channels();
    let inv = 1.0 / cfg.batch_size as f64;
    for step in 0..cfg.steps {
        grad.fill(0.0);
        for _ in 0..cfg.batch_size {
            let ep = &episodes[rng.random_range(0..episodes.len())];
            let end = rng.random_range(1..=ep.len());
            let start = end.saturating_sub(w);
            let x = masked_rows(&ep.states[start..end], &ep.actions[start..end], w);
            let trace = model.net.forward_trace(&x)?;
            let target = data_target(&x, w, c);
            let (loss, g) = kept_mse(trace.output(), &target, end - start, c, inv);
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            model.net.backward(&trace, &g, &mut grad);
        }
        opt.step(&mut model.net, &grad)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_relative_error, numeric_gradient};
    use crate::store::test_support::ramp_episode;
    use crate::store::Label;

    fn wave_dataset(n: usize, len: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let eps = (0..n)
            .map(|i| {
                let phase: f64 = rng.random_range(0.0..6.0);
                let amp: f64 = rng.random_range(0.8..1.2);
                Episode {
                    id: format!("w{i}"),
                    label: Label::Success,
                    states: (0..len)
                        .map(|t| {
                            let u = phase + 0.3 * t as f64;
                            vec![amp * u.sin(), amp * u.cos()]
                        })
                        .collect(),
                    actions: (0..len).map(|t| vec![0.3 * (phase + 0.3 * t as f64).cos()]).collect(),
                }
            })
            .collect();
        Dataset::new(eps, Some(len)).unwrap()
    }

    fn swapped(data: &Dataset) -> Dataset {
        let eps = data
            .episodes
            .iter()
            .map(|e| Episode {
                states: e.states.iter().map(|s| vec![s[1], s[0]]).collect(),
                ..e.clone()
            })
            .collect();
        Dataset::new(eps, Some(data.k_max())).unwrap()
    }

    fn small_vae(beta: f64) -> VaeConfig {
        VaeConfig {
            latent: 3,
            hidden: 5,
            conv_channels: 2,
            beta,
            steps: 10,
            ..VaeConfig::default()
        }
    }

    fn mean_score(d: &dyn Detector, data: &Dataset) -> f64 {
        data.episodes.iter().map(|e| d.score(&e.as_sub()).unwrap()).sum::<f64>() / data.len() as f64
    }

    #[test]
    fn elbo_gradient_with_fixed_noise() {
        for beta in [1.0, 0.0] {
            let m = VaeModel::new(small_vae(beta), 1, 1, 3, NormStats::identity(1, 1)).unwrap();
            let ep = ramp_episode("g", 3, 1, 1);
            let x = masked_rows(&ep.states[..2], &ep.actions[..2], 3);
            let noise = [0.3, -1.1, 0.7];
            let mut ge = vec![0.0; m.encoder.param_count()];
            let mut gd = vec![0.0; m.decoder.param_count()];
            m.accumulate_grad(&x, 2, &noise, 1.0, &mut ge, &mut gd).unwrap();
            let mut probe = m.clone();
            let ne = numeric_gradient(m.encoder.params(), 1e-5, |p| {
                probe.encoder.params_mut().copy_from_slice(p);
                probe.loss(&x, 2, &noise).unwrap()
            });
            let mut probe = m.clone();
            let nd = numeric_gradient(m.decoder.params(), 1e-5, |p| {
                probe.decoder.params_mut().copy_from_slice(p);
                probe.loss(&x, 2, &noise).unwrap()
            });
            assert!(max_relative_error(&ge, &ne) < 1e-4);
            assert!(max_relative_error(&gd, &nd) < 1e-4);
        }
    }

    #[test]
    fn zero_beta_has_no_kl_gradient() {
        let m = VaeModel::new(small_vae(0.0), 1, 1, 3, NormStats::identity(1, 1)).unwrap();
        let ep = ramp_episode("k", 3, 1, 1);
        let x = masked_rows(&ep.states, &ep.actions, 3);
        let noise = [0.0; 3];
        let mut ge = vec![0.0; m.encoder.param_count()];
        let mut gd = vec![0.0; m.decoder.param_count()];
        m.accumulate_grad(&x, 3, &noise, 1.0, &mut ge, &mut gd).unwrap();
        // with zero noise and beta = 0 the log-variance head gets no gradient
        let p = m.encoder.param_count();
        let out_bias = &ge[p - 3..];
        assert!(out_bias.iter().all(|&g| g == 0.0), "{out_bias:?}");
    }

    #[test]
    fn vae_trains_and_scores_deterministically() {
        let train = wave_dataset(30, 12, 1);
        let held = wave_dataset(10, 12, 2).with_norm_stats(train.norm_stats.clone()).unwrap();
        let cfg = VaeConfig {
            steps: 600,
            hidden: 32,
            latent: 4,
            optimizer: OptimizerConfig::adam(3e-3),
            ..VaeConfig::default()
        };
        let init = VaeModel::new(cfg.clone(), 2, 1, 12, train.norm_stats.clone()).unwrap();
        let a = train_vae(&train, &cfg).unwrap();
        let b = train_vae(&train, &cfg).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.decoder, b.decoder);
        let sub = held.episodes[0].as_sub();
        assert_eq!(a.score(&sub).unwrap(), a.score(&sub).unwrap());
        let after = mean_score(&a, &held);
        assert!(after < mean_score(&init, &held));
        let odd = swapped(&held).with_norm_stats(train.norm_stats.clone()).unwrap();
        assert!(mean_score(&a, &odd) > after);
    }

    #[test]
    fn vae_memorizes_single_episode() {
        let one = wave_dataset(1, 8, 5);
        let cfg = VaeConfig {
            steps: 1500,
            hidden: 32,
            latent: 2,
            beta: 0.0,
            batch_size: 4,
            optimizer: OptimizerConfig::adam(3e-3),
            ..VaeConfig::default()
        };
        let m = train_vae(&one, &cfg).unwrap();
        let s = m.score(&one.episodes[0].as_sub()).unwrap();
        assert!(s < 0.05, "{s}");
    }

    fn small_windowed(window: usize) -> WindowedModel {
        let cfg = WindowedConfig {
            window,
            hidden: 6,
            bottleneck: 2,
            ..WindowedConfig::default()
        };
        WindowedModel::new(cfg, 2, 1, NormStats::identity(2, 1)).unwrap()
    }

    #[test]
    fn window_counting_and_max() {
        let m = small_windowed(4);
        let ep = ramp_episode("w", 9, 2, 1);
        assert_eq!(m.window_errors(&ep.states[..4], &ep.actions[..4]).unwrap().len(), 1);
        assert_eq!(m.window_errors(&ep.states, &ep.actions).unwrap().len(), 6);
        assert_eq!(m.window_errors(&ep.states[..2], &ep.actions[..2]).unwrap().len(), 1);
        assert_eq!(max_window_score(&[0.2, 0.7, 0.1]), 0.7);
    }

    #[test]
    fn windowed_monotone_and_batched_scores_agree() {
        let m = small_windowed(4);
        let ep = ramp_episode("w", 12, 2, 1);
        let lengths: Vec<usize> = (1..=12).collect();
        let batched = m.score_prefixes(&ep.as_sub(), &lengths).unwrap();
        for (&k, b) in lengths.iter().zip(&batched) {
            assert_eq!(*b, m.score(&ep.prefix(k).unwrap()).unwrap());
        }
        for pair in batched[3..].windows(2) {
            assert!(pair[1] >= pair[0]);
        }
    }

    #[test]
    fn windowed_trains() {
        let train = wave_dataset(30, 30, 3);
        let held = wave_dataset(10, 30, 4).with_norm_stats(train.norm_stats.clone()).unwrap();
        let cfg = WindowedConfig {
            window: 6,
            hidden: 32,
            steps: 800,
            optimizer: OptimizerConfig::adam(3e-3),
            ..WindowedConfig::default()
        };
        let init = WindowedModel::new(cfg.clone(), 2, 1, train.norm_stats.clone()).unwrap();
        let a = train_windowed(&train, &cfg).unwrap();
        assert_eq!(a.net, train_windowed(&train, &cfg).unwrap().net);
        let after = mean_score(&a, &held);
        assert!(after < mean_score(&init, &held));
        let odd = swapped(&held).with_norm_stats(train.norm_stats.clone()).unwrap();
        assert!(mean_score(&a, &odd) > after);
    }
}
