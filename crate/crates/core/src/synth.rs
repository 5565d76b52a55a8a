//! Synthetic goal-reaching benchmark: a 2-D point mass driven by a PD
//! controller, with scripted failure modes injected mid-episode.
//!
//! State is `[p_x, p_y, v_x, v_y, g_x - p_x, g_y - p_y]` and the action is an
//! acceleration command clipped per component. Successful episodes stop on
//! the first step inside the goal radius; failures run to `k_max`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::store::{Dataset, Episode, Label};

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub k_max: usize,
    pub dt: f64,
    pub kp: f64,
    pub kd: f64,
    /// Linear velocity damping.
    pub friction: f64,
    pub accel_limit: f64,
    /// Std of the per-step velocity noise.
    pub process_noise: f64,
    /// Std of the behaviour policy's per-step action noise.
    pub action_noise: f64,
    pub start_center: [f64; 2],
    /// Half-width of the uniform start box.
    pub start_spread: f64,
    /// Half-width of the uniform goal box around the origin.
    pub goal_spread: f64,
    pub goal_radius: f64,
    /// Relative per-episode jitter of `kp` and `kd`; 0 is the nominal controller.
    pub gain_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            k_max: 60,
            dt: 0.1,
            kp: 1.5,
            kd: 2.0,
            friction: 0.1,
            accel_limit: 2.0,
            process_noise: 0.03,
            action_noise: 0.1,
            start_center: [-3.0, -3.0],
            start_spread: 1.0,
            goal_spread: 0.5,
            goal_radius: 0.3,
            gain_jitter: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("kp", self.kp),
            ("kd", self.kd),
            ("accel_limit", self.accel_limit),
            ("process_noise", self.process_noise),
            ("start_spread", self.start_spread),
            ("goal_radius", self.goal_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.friction >= 0.0
            && self.goal_spread >= 0.0
            && self.action_noise >= 0.0
            && (0.0..1.0).contains(&self.gain_jitter))
        {
            return Err(Error::Config(
                "friction, goal_spread, action_noise >= 0 and gain_jitter in [0, 1) required".into(),
            ));
        }
        if self.k_max < 2 {
            return Err(Error::Config("k_max must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Damping gain scaled by `1 - magnitude`.
    Drift,
    /// A rotating acceleration of size `magnitude` added to the command.
    Spin,
    /// Command scaled by `1 - min(magnitude, 1)`.
    Dropout,
    /// Position displaced by `magnitude` at the first step.
    OffpolicyStart,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::Drift,
        AnomalyKind::Spin,
        AnomalyKind::Dropout,
        AnomalyKind::OffpolicyStart,
    ];

    pub fn default_magnitude(self) -> f64 {
        match self {
            AnomalyKind::Drift => 1.6,
            AnomalyKind::Spin => 2.0,
            AnomalyKind::Dropout => 1.0,
            AnomalyKind::OffpolicyStart => 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub onset: usize,
    pub magnitude: f64,
}

/// How anomalous episodes are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyMix {
    /// Kinds are assigned round-robin.
    pub kinds: Vec<AnomalyKind>,
    pub onset_min: usize,
    pub onset_max: usize,
}

impl Default for AnomalyMix {
    fn default() -> Self {
        AnomalyMix {
            kinds: AnomalyKind::ALL.to_vec(),
            onset_min: 3,
            onset_max: 15,
        }
    }
}

impl AnomalyMix {
    pub fn only(kind: AnomalyKind) -> Self {
        AnomalyMix {
            kinds: vec![kind],
            ..AnomalyMix::default()
        }
    }

    fn draw<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> AnomalySpec {
        let kind = self.kinds[i % self.kinds.len()];
        let onset = match kind {
            AnomalyKind::OffpolicyStart => 0,
            _ => rng.random_range(self.onset_min..=self.onset_max),
        };
        AnomalySpec {
            kind,
            onset,
            magnitude: kind.default_magnitude(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Gains {
    kp: f64,
    kd: f64,
}

fn clip(v: f64, limit: f64) -> f64 {
    v.clamp(-limit, limit)
}

fn controller(gains: Gains, p: [f64; 2], v: [f64; 2], g: [f64; 2], limit: f64) -> [f64; 2] {
    [0, 1].map(|i| clip(gains.kp * (g[i] - p[i]) - gains.kd * v[i], limit))
}

fn state(p: [f64; 2], v: [f64; 2], g: [f64; 2]) -> Vec<f64> {
    vec![p[0], p[1], v[0], v[1], g[0] - p[0], g[1] - p[1]]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Outcome of one closed-loop rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub reached_goal: bool,
}

/// Simulates one episode. With `stop_at_goal` the episode ends on the first
/// recorded state inside the goal; otherwise it always runs `k_max` steps.
pub fn rollout<R: Rng + ?Sized>(cfg: &SynthConfig, stop_at_goal: bool, rng: &mut R) -> Rollout {
    let jitter = |rng: &mut R| {
        if cfg.gain_jitter > 0.0 {
            1.0 + rng.random_range(-cfg.gain_jitter..=cfg.gain_jitter)
        } else {
            1.0
        }
    };
    let gains = Gains {
        kp: cfg.kp * jitter(rng),
        kd: cfg.kd * jitter(rng),
    };
    let mut p = [0, 1].map(|i| cfg.start_center[i] + rng.random_range(-cfg.start_spread..=cfg.start_spread));
    let goal = [0, 1].map(|_| {
        if cfg.goal_spread > 0.0 {
            rng.random_range(-cfg.goal_spread..=cfg.goal_spread)
        } else {
            0.0
        }
    });
    let mut v = [0.0; 2];
    let noise = Normal::new(0.0, cfg.process_noise).expect("validated noise scale");
    let action_noise = Normal::new(0.0, cfg.action_noise).expect("validated noise scale");
    let mut states = Vec::with_capacity(cfg.k_max);
    let mut actions = Vec::with_capacity(cfg.k_max);
    let mut reached_goal = false;
    for _ in 0..cfg.k_max {
        let a = controller(gains, p, v, goal, cfg.accel_limit)
            .map(|ai| clip(ai + action_noise.sample(rng), cfg.accel_limit));
        states.push(state(p, v, goal));
        actions.push(a.to_vec());
        if dist(p, goal) < cfg.goal_radius {
            reached_goal = true;
            if stop_at_goal {
                break;
            }
        }
        for i in 0..2 {
            v[i] = v[i] * (1.0 - cfg.friction * cfg.dt) + a[i] * cfg.dt + noise.sample(rng);
            p[i] += v[i] * cfg.dt;
        }
    }
    Rollout {
        states,
        actions,
        reached_goal,
    }
}

/// Re-simulates an episode from `spec.onset` under the corruption.
///
/// The recorded trajectory fixes the process noise; the re-simulated branch
/// tracks its deviation `d` from the recording, and the (nominal) controller's
/// reaction to `d` is added to the recorded action before corruption.
pub fn inject_anomaly(episode: &Episode, spec: &AnomalySpec, cfg: &SynthConfig) -> Result<Episode> {
    let len = episode.len();
    if spec.onset >= len {
        return Err(Error::OutOfRange {
            what: "anomaly onset",
            value: spec.onset,
            min: 0,
            max: len.saturating_sub(1),
        });
    }
    if !(spec.magnitude >= 0.0 && spec.magnitude.is_finite()) {
        return Err(Error::Config(format!("anomaly magnitude must be non-negative, got {}", spec.magnitude)));
    }
    episode.validate(STATE_DIM, ACTION_DIM)?;
    let mut out = episode.clone();
    out.label = Label::Failure;
    let vel = |s: &[f64]| [s[2], s[3]];

    let mut dp = [0.0; 2];
    let mut dv = [0.0; 2];
    if spec.kind == AnomalyKind::OffpolicyStart {
        let s = &episode.states[spec.onset];
        let to_goal = [s[4], s[5]];
        let n = to_goal[0].hypot(to_goal[1]).max(1e-12);
        dp = [-to_goal[1] / n * spec.magnitude, to_goal[0] / n * spec.magnitude];
    }
    let spin_phase = {
        let v = vel(&episode.states[spec.onset]);
        v[1].atan2(v[0]) + std::f64::consts::FRAC_PI_2
    };
    let nominal = Gains { kp: cfg.kp, kd: cfg.kd };
    for t in spec.onset..len {
        let rec = &episode.states[t];
        let p = [rec[0] + dp[0], rec[1] + dp[1]];
        let v = [rec[2] + dv[0], rec[3] + dv[1]];
        let g = [rec[4] + rec[0], rec[5] + rec[1]];
        out.states[t] = if dp == [0.0; 2] && dv == [0.0; 2] { rec.clone() } else { state(p, v, g) };

        let a = &episode.actions[t];
        let mut cmd = [0, 1].map(|i| a[i] - nominal.kp * dp[i] - nominal.kd * dv[i]);
        match spec.kind {
            AnomalyKind::Drift => {
                for i in 0..2 {
                    cmd[i] += spec.magnitude * nominal.kd * v[i];
                }
            }
            AnomalyKind::Spin => {
                let phi = spin_phase + 0.25 * (t - spec.onset) as f64;
                cmd[0] += spec.magnitude * phi.cos();
                cmd[1] += spec.magnitude * phi.sin();
            }
            AnomalyKind::Dropout => {
                let keep = 1.0 - spec.magnitude.min(1.0);
                cmd = cmd.map(|c| keep * c);
            }
            AnomalyKind::OffpolicyStart => {}
        }
        let cmd = cmd.map(|c| clip(c, cfg.accel_limit));
        let da = [cmd[0] - a[0], cmd[1] - a[1]];
        out.actions[t] = if da == [0.0; 2] { a.clone() } else { cmd.to_vec() };

        for i in 0..2 {
            dv[i] = dv[i] * (1.0 - cfg.friction * cfg.dt) + da[i] * cfg.dt;
            dp[i] += dv[i] * cfg.dt;
        }
    }
    Ok(out)
}

fn normal_episode(cfg: &SynthConfig, id: String, seed: u64) -> Result<Episode> {
    let mut rng = seeded(seed);
    for _ in 0..100 {
        let r = rollout(cfg, true, &mut rng);
        if r.reached_goal {
            return Ok(Episode {
                id,
                label: Label::Success,
                states: r.states,
                actions: r.actions,
            });
        }
    }
    Err(Error::Config(format!(
        "goal unreachable within k_max = {} steps under this configuration",
        cfg.k_max
    )))
}

fn anomalous_episode(cfg: &SynthConfig, id: String, spec: &AnomalySpec, seed: u64) -> Result<Episode> {
    let mut rng = seeded(seed);
    let r = rollout(cfg, false, &mut rng);
    let base = Episode {
        id,
        label: Label::Success,
        states: r.states,
        actions: r.actions,
    };
    inject_anomaly(&base, spec, cfg)
}

/// `n_normal` successes followed by `n_anomalous` failures; deterministic per seed.
pub fn generate_dataset(cfg: &SynthConfig, n_normal: usize, n_anomalous: usize, mix: &AnomalyMix, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n_anomalous > 0 && (mix.kinds.is_empty() || mix.onset_min > mix.onset_max || mix.onset_max >= cfg.k_max) {
        return Err(Error::Config("anomaly mix needs kinds and onset_min <= onset_max < k_max".into()));
    }
    let normals = (0..n_normal)
        .into_par_iter()
        .map(|i| normal_episode(cfg, format!("n{i:05}"), derive_seed(seed, 2 * i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut spec_rng = seeded(derive_seed(seed, u64::MAX));
    let specs: Vec<AnomalySpec> = (0..n_anomalous).map(|i| mix.draw(i, &mut spec_rng)).collect();
    let anomalies = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| anomalous_episode(cfg, format!("a{i:05}"), spec, derive_seed(seed, 2 * i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let audit: serde_json::Map<String, serde_json::Value> = anomalies
        .iter()
        .zip(&specs)
        .map(|(e, s)| (e.id.clone(), serde_json::to_value(s).expect("plain struct")))
        .collect();
    let episodes = normals.into_iter().chain(anomalies).collect();
    Ok(Dataset::new(episodes, Some(cfg.k_max))?
        .with_annotation("synth_config", serde_json::to_value(cfg)?)
        .with_annotation("seed", seed.into())
        .with_annotation("anomalies", audit.into()))
}

/// Anomaly specs recorded by [`generate_dataset`], keyed by episode id.
pub fn anomaly_specs(data: &Dataset) -> std::collections::BTreeMap<String, AnomalySpec> {
    data.meta
        .annotations
        .get("anomalies")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    /// Gain jitter of the deployment controller used for validation and test.
    pub deploy_jitter: f64,
    pub mix: AnomalyMix,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig::default(),
            n_train: 300,
            n_val: 200,
            n_test_normal: 100,
            n_test_anomalous: 100,
            deploy_jitter: 0.15,
            mix: AnomalyMix::default(),
            seed: 0,
        }
    }
}

/// Train on the nominal controller; validate and test on the jittered one.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Benchmark {
    pub fn generate(cfg: &BenchmarkConfig) -> Result<Self> {
        let nominal = SynthConfig {
            gain_jitter: 0.0,
            ..cfg.synth.clone()
        };
        let deploy = SynthConfig {
            gain_jitter: cfg.deploy_jitter,
            ..cfg.synth.clone()
        };
        let none = AnomalyMix::default();
        Ok(Benchmark {
            train: generate_dataset(&nominal, cfg.n_train, 0, &none, derive_seed(cfg.seed, 10))?,
            val: generate_dataset(&deploy, cfg.n_val, 0, &none, derive_seed(cfg.seed, 11))?,
            test: generate_dataset(&deploy, cfg.n_test_normal, cfg.n_test_anomalous, &cfg.mix, derive_seed(cfg.seed, 12))?,
        })
    }
}
