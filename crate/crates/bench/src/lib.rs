//! Fixtures shared by the benchmarks.

use rand::Rng;

use policystop_core::esp::{EnsembleModel, EspConfig};
use policystop_core::flow::{FlowModel, FlowTrainConfig};
use policystop_core::rng::seeded;
use policystop_core::synth::{rollout, SynthConfig};
use policystop_core::{Episode, Label, NormStats};

pub const K_MAX: usize = 60;

/// One full-horizon rollout of the synthetic task.
pub fn episode(seed: u64) -> Episode {
    let cfg = SynthConfig::default();
    let r = rollout(&cfg, false, &mut seeded(seed));
    Episode {
        id: format!("bench-{seed}"),
        label: Label::Success,
        states: r.states,
        actions: r.actions,
    }
}

/// Default-sized flow over the synthetic channels with random conditioners.
pub fn random_flow(seed: u64) -> FlowModel {
    let cfg = FlowTrainConfig {
        k_max: K_MAX,
        ..FlowTrainConfig::default()
    };
    let mut m = FlowModel::new(cfg, 6, 2, NormStats::identity(6, 2)).expect("valid config");
    let mut rng = seeded(seed);
    for layer in &mut m.layers {
        layer.conditioner.init_uniform(&mut rng);
        for p in layer.conditioner.params_mut() {
            *p *= 0.1;
        }
    }
    m
}

/// Untrained ensemble; scoring cost does not depend on the weights.
pub fn ensemble(config: EspConfig) -> EnsembleModel {
    EnsembleModel::init(config, 6, 2, K_MAX, NormStats::identity(6, 2)).expect("valid config")
}

/// `n` positive and `n` negative scores with ties.
pub fn score_sets(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeded(seed);
    let pos = (0..n).map(|_| (rng.random::<f64>() * 200.0).round() + 20.0).collect();
    let neg = (0..n).map(|_| (rng.random::<f64>() * 200.0).round()).collect();
    (pos, neg)
}
