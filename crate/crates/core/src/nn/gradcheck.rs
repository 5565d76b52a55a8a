//! Finite-difference gradient checking.

use super::{Loss, Network};
use crate::error::Result;

/// Central differences of `f` with respect to each entry of `params`.
pub fn numeric_gradient(params: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares backpropagated parameter gradients against central differences.
pub fn gradient_check(net: &Network, loss: Loss, input: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    let (analytic, _) = net.grad(loss, input, target, 1.0)?;
    let mut probe = net.clone();
    let numeric = numeric_gradient(net.params(), eps, |p| {
        probe.params_mut().copy_from_slice(p);
        let y = probe.forward(input).expect("shape checked above");
        loss.value(&y, target)
    });
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn linear_net_is_exact() {
        let mut net = Network::new(3, vec![LayerSpec::Dense { inputs: 3, outputs: 2 }]).unwrap();
        net.init_uniform(&mut seeded(0));
        let err = gradient_check(&net, Loss::SquaredError, &[0.5, -1.0, 2.0], &[0.1, 0.2], 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn relu_net_away_from_kinks() {
        let mut rng = seeded(77);
        let mut checked = 0;
        while checked < 5 {
            let mut net = Network::mlp(&[3, 4, 2], Activation::Relu).unwrap();
            net.init_uniform(&mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            // reject inputs whose hidden pre-activations sit near zero
            let pre = Network::new(3, net.layers()[..1].to_vec())
                .map(|mut n| {
                    let k = n.param_count();
                    n.params_mut().copy_from_slice(&net.params()[..k]);
                    n.forward(&x).unwrap()
                })
                .unwrap();
            if pre.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            let err = gradient_check(&net, Loss::MeanSquaredError, &x, &[0.3, -0.4], 1e-5).unwrap();
            assert!(err < 1e-4, "{err}");
            checked += 1;
        }
    }

    #[test]
    fn tanh_conv_net() {
        let mut net = Network::new(
            10,
            vec![
                LayerSpec::Conv1d { length: 5, in_channels: 2, out_channels: 3, kernel: 3 },
                LayerSpec::Activation { activation: Activation::Tanh },
                LayerSpec::Dense { inputs: 15, outputs: 2 },
            ],
        )
        .unwrap();
        net.init_uniform(&mut seeded(12));
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let err = gradient_check(&net, Loss::SquaredError, &x, &[0.5, -0.5], 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
