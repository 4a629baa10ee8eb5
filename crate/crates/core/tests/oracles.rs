//! Statistics and surgery checked against brute-force references written
//! independently of the library code.

use filterprune::harness::Dataset;
use filterprune::netgraph::{build_model, residual_blocks, ArchSpec, NetworkGraph};
use filterprune::stats::{collect_stats, StatsOptions};
use filterprune::surgery::{average_consecutive, prune_layer, prune_residual_block, ResidualMode};
use filterprune::tensor::{LayerParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Same-padded 3×3 convolution of one single-channel image, then relu.
fn conv_relu(img: &[f64], h: usize, w: usize, kernel: &[f64], bias: f64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = bias;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += kernel[ky * 3 + kx] * img[sy as usize * w + sx as usize];
                    }
                }
            }
            out[y * w + x] = acc.max(0.0);
        }
    }
    out
}

#[test]
fn mean_activation_and_apoz_match_brute_force() {
    let (h, w) = (4, 4);
    let spec = ArchSpec::vgg_tiny(&[2], [1, h, w], 2);
    let mut net = build_model::<f64>(&spec, 0).unwrap();
    let kernels = [
        [1.0, 0.0, -1.0, 2.0, 0.5, -2.0, 1.0, 0.0, -1.0],
        [0.25, 0.25, 0.25, 0.25, -1.0, 0.25, 0.25, 0.25, 0.25],
    ];
    let biases = [0.1, -0.2];
    let conv = LayerParams::conv(
        Tensor::from_vec(&[2, 1, 3, 3], kernels.concat()).unwrap(),
        Tensor::from_vec(&[2], biases.to_vec()).unwrap(),
    )
    .unwrap();
    net.replace_layer(0, conv).unwrap();

    let data = Dataset::synthetic(4, 2, 4, [1, h, w]);
    let stats = collect_stats(&net, &data, StatsOptions::default()).unwrap();
    let means = stats.mean_activation(0).unwrap();
    let apoz = stats.apoz(0).unwrap();

    let (mu, sigma) = data.normalisation();
    for f in 0..2 {
        let (mut mean_sum, mut zeros) = (0.0, 0usize);
        for i in 0..data.len() {
            let img: Vec<f64> = data.image(i).iter().map(|&p| (f64::from(p) - mu[0]) / sigma[0]).collect();
            let act = conv_relu(&img, h, w, &kernels[f], biases[f]);
            mean_sum += act.iter().sum::<f64>() / (h * w) as f64;
            zeros += act.iter().filter(|&&a| a == 0.0).count();
        }
        let expected_mean = mean_sum / data.len() as f64;
        let expected_apoz = zeros as f64 / (data.len() * h * w) as f64;
        assert!((means[f] - expected_mean).abs() < 1e-9, "filter {f}: {} vs {expected_mean}", means[f]);
        assert!((apoz[f] - expected_apoz).abs() < 1e-12, "filter {f}: {} vs {expected_apoz}", apoz[f]);
    }
}

/// Keeps rows `kept` of a `[n, ...]` tensor.
fn rows(t: &Tensor<f64>, kept: &[usize]) -> Tensor<f64> {
    let mut shape = t.shape().to_vec();
    shape[0] = kept.len();
    let data = kept.iter().flat_map(|&r| t.outer(r).to_vec()).collect();
    Tensor::from_vec(&shape, data).unwrap()
}

/// Keeps input-channel slices `kept` of a `[o, i, kh, kw]` tensor.
fn in_channels(t: &Tensor<f64>, kept: &[usize]) -> Tensor<f64> {
    let s = t.shape();
    let plane = s[2] * s[3];
    let mut data = Vec::new();
    for o in 0..s[0] {
        let row = t.outer(o);
        for &c in kept {
            data.extend_from_slice(&row[c * plane..(c + 1) * plane]);
        }
    }
    Tensor::from_vec(&[s[0], kept.len(), s[2], s[3]], data).unwrap()
}

fn sliced_conv(net: &NetworkGraph<f64>, id: usize, out_kept: Option<&[usize]>, in_kept: Option<&[usize]>) -> LayerParams<f64> {
    let layer = net.layer(id).unwrap();
    let mut w = layer.weights().unwrap().clone();
    let mut b = layer.bias().unwrap().clone();
    if let Some(k) = out_kept {
        w = rows(&w, k);
        b = rows(&b, k);
    }
    if let Some(k) = in_kept {
        w = in_channels(&w, k);
    }
    LayerParams::conv(w, b).unwrap()
}

/// `net` with several layers swapped at once.
fn with_layers(net: &NetworkGraph<f64>, swaps: Vec<(usize, LayerParams<f64>)>) -> NetworkGraph<f64> {
    let mut layers = net.layers().to_vec();
    for (id, layer) in swaps {
        layers[id] = layer;
    }
    NetworkGraph::new(net.input_shape(), layers, net.residual_links().to_vec(), net.class_count()).unwrap()
}

#[test]
fn residual_block_surgery_matches_manual_slicing() {
    let spec = ArchSpec::resnet_tiny(&[4, 6, 5, 7, 3], [2, 8, 8], 3);
    let net = build_model::<f64>(&spec, 9).unwrap();
    let blocks = residual_blocks(&net);
    assert_eq!(blocks.len(), 2);

    // first-only on block 1
    let [a, b, c] = blocks[1];
    let keep_a = [0, 2, 3, 6];
    let pruned = prune_residual_block(&net, 1, &[keep_a.to_vec()], ResidualMode::FirstOnly).unwrap();
    let manual = with_layers(
        &net,
        vec![
            (a, sliced_conv(&net, a, Some(&keep_a), None)),
            (b, sliced_conv(&net, b, None, Some(&keep_a))),
        ],
    );
    assert!(pruned.params_bits_eq(&manual));
    assert_eq!(pruned.layer(c), net.layer(c));

    // first-two on block 0
    let [a, b, c] = blocks[0];
    let (keep_a, keep_b) = (vec![1, 4, 5], vec![0, 1, 4]);
    let pruned = prune_residual_block(&net, 0, &[keep_a.clone(), keep_b.clone()], ResidualMode::FirstTwo).unwrap();
    let manual = with_layers(
        &net,
        vec![
            (a, sliced_conv(&net, a, Some(&keep_a), None)),
            (b, sliced_conv(&net, b, Some(&keep_b), Some(&keep_a))),
            (c, sliced_conv(&net, c, None, Some(&keep_b))),
        ],
    );
    assert!(pruned.params_bits_eq(&manual));
    assert_eq!(pruned.residual_links(), net.residual_links());
}

#[test]
fn plain_surgery_matches_manual_slicing_and_shrinks_the_dense_input() {
    let spec = ArchSpec::vgg_tiny(&[5, 6], [1, 8, 8], 4);
    let net = build_model::<f64>(&spec, 2).unwrap();
    let convs = net.conv_layers();
    let keep = [1, 2, 4];
    let pruned = prune_layer(&net, convs[0], &keep).unwrap();
    let manual = with_layers(
        &net,
        vec![
            (convs[0], sliced_conv(&net, convs[0], Some(&keep), None)),
            (convs[1], sliced_conv(&net, convs[1], None, Some(&keep))),
        ],
    );
    assert!(pruned.params_bits_eq(&manual));

    // last conv feeds the dense layer through a pool: 6 channels of 2×2
    let keep = [0, 5];
    let pruned = prune_layer(&net, convs[1], &keep).unwrap();
    let dense = net.dense_layers()[0];
    let w = net.layer(dense).unwrap().weights().unwrap();
    let pw = pruned.layer(dense).unwrap().weights().unwrap();
    assert_eq!(pw.shape(), &[w.shape()[0], 8]);
    for o in 0..w.shape()[0] {
        let expected: Vec<f64> = keep.iter().flat_map(|&c| w.outer(o)[c * 4..(c + 1) * 4].to_vec()).collect();
        assert_eq!(pw.outer(o), &expected[..]);
    }
}

#[test]
fn averaging_pairs_matches_a_hand_computation() {
    let spec = ArchSpec::vgg_tiny(&[4, 3], [1, 6, 6], 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = build_model::<f64>(&spec, 5).unwrap();
    let convs = net.conv_layers();
    let mut net = net;
    let bias = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let w = net.layer(convs[0]).unwrap().weights().unwrap().clone();
    net.replace_layer(convs[0], LayerParams::conv(w, bias).unwrap()).unwrap();

    let averaged = average_consecutive(&net, convs[0]).unwrap();
    let (p, c) = (net.layer(convs[0]).unwrap(), net.layer(convs[1]).unwrap());
    let (ap, ac) = (averaged.layer(convs[0]).unwrap(), averaged.layer(convs[1]).unwrap());
    for t in 0..2 {
        let (r0, r1) = (p.weights().unwrap().outer(2 * t), p.weights().unwrap().outer(2 * t + 1));
        let mean: Vec<f64> = r0.iter().zip(r1).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(ap.weights().unwrap().outer(t), &mean[..]);
        let pb = p.bias().unwrap().data();
        assert_eq!(ap.bias().unwrap().data()[t], (pb[2 * t] + pb[2 * t + 1]) / 2.0);
    }
    let cw = c.weights().unwrap();
    for o in 0..3 {
        for t in 0..2 {
            for k in 0..9 {
                let expected = cw.outer(o)[2 * t * 9 + k] + cw.outer(o)[(2 * t + 1) * 9 + k];
                assert_eq!(ac.weights().unwrap().outer(o)[t * 9 + k], expected);
            }
        }
    }
    assert_eq!(ac.bias(), c.bias());
}
