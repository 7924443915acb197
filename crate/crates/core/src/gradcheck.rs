//! Central finite-difference checks for layer, network and loss gradients.
//!
//! Errors are reported as `max_i |analytic_i - numeric_i|` divided by the
//! largest gradient magnitude involved, so components that are legitimately
//! zero (dead ReLUs, masked samples) do not produce spurious ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Origin;
use crate::losses::{selective_batch_loss, LossConfig, LossError};
use crate::nn::{Layer, Mode, Network, NnError, Tensor4};

pub const FD_STEP: f64 = 1e-5;

/// Tensors whose true gradient is zero (a conv bias feeding a training-mode
/// batch norm) only carry rounding noise on both sides; their error is
/// measured against this fraction of the network's largest gradient.
pub const NETWORK_FLOOR: f64 = 1e-6;

/// `max |a - n| / max(‖a‖∞, ‖n‖∞)`, or 0 when both are exactly zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max) / scale
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    /// Error on the input gradient, if it was checked.
    pub input: Option<f64>,
    /// Error per parameter tensor, by name.
    pub params: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|(_, e)| *e).chain(self.input).fold(0.0, f64::max)
    }
}

fn probe_loss(y: &Tensor4<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn with_param(layer: &mut Layer<f64>, p: usize, i: usize, v: f64) {
    layer.params_mut("")[p].value[i] = v;
}

/// Checks a layer in training mode against the probe loss `Σ r ⊙ layer(x)`
/// with fixed random `r`. Covers the input gradient and every parameter.
pub fn check_layer(layer: &Layer<f64>, x: &Tensor4<f64>, seed: u64) -> Result<GradCheck, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = layer.clone();
    let y = l.forward(x, Mode::Train)?;
    let r: Vec<f64> = (0..y.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    l.zero_grad();
    let gx = l.backward(&Tensor4::new(y.shape(), r.clone())?)?;

    let eval = |layer: &Layer<f64>, input: &Tensor4<f64>| -> f64 {
        let mut c = layer.clone();
        probe_loss(&c.forward(input, Mode::Train).expect("shape checked above"), &r)
    };
    let numeric_x = numeric_gradient(x.data(), |v| eval(layer, &Tensor4::new(x.shape(), v.to_vec()).unwrap()));
    let mut out = GradCheck {
        input: Some(relative_error(gx.data(), &numeric_x)),
        params: Vec::new(),
    };

    let mut base = layer.clone();
    let names_values: Vec<(String, Vec<f64>)> = base.params_mut("").into_iter().map(|p| (p.name, p.value.to_vec())).collect();
    let analytic: Vec<Vec<f64>> = l.params_mut("").into_iter().map(|p| p.grad.to_vec()).collect();
    for (pi, (name, values)) in names_values.iter().enumerate() {
        let numeric = numeric_gradient(values, |v| {
            let mut c = layer.clone();
            for (i, &vi) in v.iter().enumerate() {
                with_param(&mut c, pi, i, vi);
            }
            eval(&c, x)
        });
        out.params.push((name.trim_start_matches('.').to_string(), relative_error(&analytic[pi], &numeric)));
    }
    Ok(out)
}

/// Batch loss of `net` in training mode.
pub fn network_loss(
    net: &Network<f64>,
    x: &Tensor4<f64>,
    labels: &[usize],
    origins: &[Origin],
    loss: &LossConfig,
) -> Result<f64, GradCheckError> {
    let mut c = net.clone();
    let y = c.forward(x, Mode::Train)?;
    Ok(selective_batch_loss(y.data(), net.n_classes(), labels, origins, loss)?.total)
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// End-to-end check of parameter gradients through `net` and `loss`.
///
/// `per_tensor` random coordinates of every parameter tensor are perturbed;
/// each tensor's error is normalized by the larger of its full analytic
/// gradient norm and the sampled numeric norm, floored at
/// [`NETWORK_FLOOR`] times the largest gradient in the network. A coordinate
/// passes on the closest of the central and the two one-sided quotients, so a
/// piecewise-linear switch inside the step is not reported as an error.
pub fn check_network(
    net: &Network<f64>,
    x: &Tensor4<f64>,
    labels: &[usize],
    origins: &[Origin],
    loss: &LossConfig,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheck, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = net.clone();
    let y = n.forward(x, Mode::Train)?;
    let batch = selective_batch_loss(y.data(), net.n_classes(), labels, origins, loss)?;
    n.zero_grad();
    n.backward(&Tensor4::new(y.shape(), batch.grad)?)?;
    let analytic: Vec<(String, Vec<f64>)> = n.params_mut().into_iter().map(|p| (p.name, p.grad.to_vec())).collect();

    let base = network_loss(net, x, labels, origins, loss)?;
    let global = analytic.iter().flat_map(|(_, g)| g).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = GradCheck::default();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if grad.len() <= per_tensor {
            (0..grad.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..grad.len())).collect()
        };
        let mut max_diff = 0.0f64;
        let mut scale = grad.iter().fold(NETWORK_FLOOR * global, |m, v| m.max(v.abs()));
        for &i in &picks {
            let at = |delta: f64| -> Result<f64, GradCheckError> {
                let mut c = net.clone();
                let mut params = c.params_mut();
                params[pi].value[i] += delta;
                drop(params);
                network_loss(&c, x, labels, origins, loss)
            };
            let (up, down) = (at(FD_STEP)?, at(-FD_STEP)?);
            let numeric = (up - down) / (2.0 * FD_STEP);
            scale = scale.max(numeric.abs());
            // A ReLU or max-pool switch inside the step spoils the central
            // quotient; the one-sided quotient on the smooth side still holds.
            let one_sided = [(up - base) / FD_STEP, (base - down) / FD_STEP];
            let diff = one_sided.iter().fold((numeric - grad[i]).abs(), |m, d| m.min((d - grad[i]).abs()));
            max_diff = max_diff.max(diff);
        }
        out.params.push((name.clone(), if scale == 0.0 { 0.0 } else { max_diff / scale }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Dense};

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
        assert!((relative_error(&[100.0, 200.0], &[100.0, 220.0]) - 20.0 / 220.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_gradient_of_a_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], |v| v[0] * v[0] + 3.0 * v[1]);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn exact_layers_pass() {
        let mut d = Dense::<f64>::new(3, 2);
        d.weight = vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6];
        let x = Tensor4::from_fn([2, 3, 1, 1], |i| i as f64 * 0.3 - 0.5);
        let r = check_layer(&Layer::Dense(d), &x, 1).unwrap();
        assert!(r.worst() < 1e-8, "{r:?}");
        assert_eq!(r.params.len(), 2);
        let mut conv = Conv2d::<f64>::same(1, 1, 3);
        conv.weight = vec![0.2; 9];
        let x = Tensor4::from_fn([1, 1, 4, 4], |i| (i as f64).sin());
        let r = check_layer(&Layer::Conv2d(conv), &x, 2).unwrap();
        assert!(r.worst() < 1e-8, "{r:?}");
    }

    #[test]
    fn network_check_tolerates_biases_feeding_batch_norm() {
        let spec = crate::nn::NetworkSpec {
            widths: vec![2, 3],
            kernel: 3,
            pools: vec![(2, 2), (2, 2)],
        };
        let net = crate::nn::build_network::<f64>(&spec, 8, 8, 3, 4).unwrap();
        let x = Tensor4::from_fn([3, 1, 8, 8], |i| ((i * 37) % 101) as f64 / 50.0 - 1.0);
        let origins = [Origin::Clean, Origin::Noisy, Origin::Noisy];
        let r = check_network(&net, &x, &[0, 1, 2], &origins, &LossConfig::cce(), 5, 1).unwrap();
        assert!(r.worst() < 1e-4, "{r:?}");
        assert!(r.params.iter().any(|(n, _)| n == "layer2.conv2d.bias"));
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let f = |v: &[f64]| v.iter().map(|x| x.powi(3)).sum::<f64>();
        let x = [0.5, -1.0, 2.0];
        let numeric = numeric_gradient(&x, f);
        let right: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        let wrong: Vec<f64> = x.iter().map(|v| 2.0 * v * v).collect();
        assert!(relative_error(&right, &numeric) < 1e-9);
        assert!(relative_error(&wrong, &numeric) > 0.3);
    }
}
