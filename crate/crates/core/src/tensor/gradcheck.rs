use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::netgraph::NetworkGraph;

use super::Tensor;

/// How many parameters per layer to probe and which ones.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub per_layer: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            per_layer: 24,
            seed: 0,
        }
    }
}

/// Largest relative error between backprop and central finite differences
/// of the cross-entropy loss, over a seeded subsample of weights and biases
/// from every weighted layer.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn check_gradients(
    network: &NetworkGraph<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    epsilon: f64,
) -> Result<f64> {
    check_gradients_with(
        network,
        input,
        labels,
        GradCheckOptions {
            epsilon,
            ..GradCheckOptions::default()
        },
    )
}

pub fn check_gradients_with(
    network: &NetworkGraph<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    opts: GradCheckOptions,
) -> Result<f64> {
    let (_, grads, _) = network.gradients(input, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = network.clone();
    let mut worst = 0.0f64;
    for id in network.param_layers() {
        let (gw, gb) = grads[id].as_ref().expect("weighted layer has gradients");
        let n_w = gw.len();
        let total = n_w + gb.len();
        let picks = sample(&mut rng, total, opts.per_layer.min(total));
        for flat in picks.iter() {
            let analytic = if flat < n_w {
                gw.data()[flat]
            } else {
                gb.data()[flat - n_w]
            };
            let original = param_value(&probe, id, flat, n_w);
            set_param(&mut probe, id, flat, n_w, original + opts.epsilon);
            let plus = probe.loss(input, labels)?;
            set_param(&mut probe, id, flat, n_w, original - opts.epsilon);
            let minus = probe.loss(input, labels)?;
            set_param(&mut probe, id, flat, n_w, original);
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn param_value(net: &NetworkGraph<f64>, id: usize, flat: usize, n_w: usize) -> f64 {
    let layer = net.layer(id).expect("layer exists");
    if flat < n_w {
        layer.weights().unwrap().data()[flat]
    } else {
        layer.bias().unwrap().data()[flat - n_w]
    }
}

fn set_param(net: &mut NetworkGraph<f64>, id: usize, flat: usize, n_w: usize, value: f64) {
    let (w, b) = net
        .layer_mut(id)
        .and_then(|l| l.params_mut())
        .expect("weighted layer");
    if flat < n_w {
        w.data_mut()[flat] = value;
    } else {
        b.data_mut()[flat - n_w] = value;
    }
}
