//! Structural filter removal.
//!
//! Removing filters from a conv layer shrinks its weight and bias tensors and
//! the input side of the next weighted layer. Relu and maxpool layers between
//! the two are channel-wise and pass the index set through unchanged. When the
//! consumer is dense, the removed channels' `H·W` input columns are removed
//! (channel-major flattening).
//!
//! A conv whose output region feeds a residual add, or which is itself the
//! target of one, cannot change width on its own; use
//! [`prune_residual_block`] on the first layers of a block instead.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{residual_blocks, NetworkGraph};
use crate::tensor::{LayerKind, LayerParams, Scalar, Tensor};

/// Which layers of a residual block may be pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    FirstOnly,
    FirstTwo,
}

impl ResidualMode {
    pub fn name(self) -> &'static str {
        match self {
            ResidualMode::FirstOnly => "first-only",
            ResidualMode::FirstTwo => "first-two",
        }
    }

    /// Number of prunable layers per block.
    pub fn depth(self) -> usize {
        match self {
            ResidualMode::FirstOnly => 1,
            ResidualMode::FirstTwo => 2,
        }
    }
}

impl fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-only" => Ok(ResidualMode::FirstOnly),
            "first-two" => Ok(ResidualMode::FirstTwo),
            other => Err(Error::invalid(format!("unknown residual mode {other:?}"))),
        }
    }
}

/// Keeps the filters `kept` (strictly ascending) of conv layer `layer_id`.
pub fn prune_layer<S: Scalar>(
    network: &NetworkGraph<S>,
    layer_id: usize,
    kept: &[usize],
) -> Result<NetworkGraph<S>> {
    let n = conv_width(network, layer_id)?;
    if kept.is_empty() {
        return Err(Error::invalid(format!("layer {layer_id}: must keep at least one filter")));
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "layer {layer_id}: kept indices must be strictly ascending"
        )));
    }
    if let Some(&bad) = kept.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!(
            "layer {layer_id}: filter index {bad} out of range for {n} filters"
        )));
    }
    check_not_residual(network, layer_id)?;
    let groups: Vec<Vec<usize>> = kept.iter().map(|&i| vec![i]).collect();
    regroup(network, layer_id, &groups)
}

/// Prunes the first (or first two) conv layers of residual block `block`.
/// `kept[j]` lists the filters kept in the block's `j`-th layer. The third
/// layer, whose width is tied to the skip connection, is never touched.
pub fn prune_residual_block<S: Scalar>(
    network: &NetworkGraph<S>,
    block: usize,
    kept: &[Vec<usize>],
    mode: ResidualMode,
) -> Result<NetworkGraph<S>> {
    let blocks = residual_blocks(network);
    let layers = blocks.get(block).ok_or_else(|| {
        Error::invalid(format!("no residual block {block} ({} blocks)", blocks.len()))
    })?;
    if kept.len() > 2 {
        return Err(Error::ResidualConstraint { layer: layers[2] });
    }
    if kept.len() != mode.depth() {
        return Err(Error::invalid(format!(
            "mode {mode} prunes {} layer(s) per block but {} kept sets were given",
            mode.depth(),
            kept.len()
        )));
    }
    let mut out = network.clone();
    for (j, k) in kept.iter().enumerate() {
        out = prune_layer(&out, layers[j], k)?;
    }
    Ok(out)
}

/// Replaces each consecutive filter pair `(2t, 2t+1)` of conv layer
/// `layer_id` by its elementwise mean; the consumer's two matching input
/// slices are summed.
pub fn average_consecutive<S: Scalar>(network: &NetworkGraph<S>, layer_id: usize) -> Result<NetworkGraph<S>> {
    let n = conv_width(network, layer_id)?;
    if n % 2 != 0 {
        return Err(Error::invalid(format!(
            "layer {layer_id} has {n} filters; averaging pairs needs an even count"
        )));
    }
    check_not_residual(network, layer_id)?;
    let groups: Vec<Vec<usize>> = (0..n / 2).map(|t| vec![2 * t, 2 * t + 1]).collect();
    regroup(network, layer_id, &groups)
}

fn conv_width<S: Scalar>(network: &NetworkGraph<S>, layer_id: usize) -> Result<usize> {
    match network.layer(layer_id) {
        Some(l @ LayerParams::Conv2d { .. }) => Ok(l.out_channels().unwrap_or(0)),
        Some(l) => Err(Error::invalid(format!(
            "layer {layer_id} is {}, not a conv layer",
            l.kind()
        ))),
        None => Err(Error::invalid(format!("no layer {layer_id}"))),
    }
}

fn check_not_residual<S: Scalar>(network: &NetworkGraph<S>, layer_id: usize) -> Result<()> {
    let (region, _) = network.channel_region(layer_id);
    let tied = network
        .residual_links()
        .iter()
        .any(|l| region.contains(&l.from) || region.contains(&l.into));
    if tied {
        return Err(Error::ResidualConstraint { layer: layer_id });
    }
    Ok(())
}

/// New filter `t` is the mean of old filters `groups[t]`; the consumer's new
/// input channel `t` is the sum of its old input channels `groups[t]`.
fn regroup<S: Scalar>(network: &NetworkGraph<S>, layer_id: usize, groups: &[Vec<usize>]) -> Result<NetworkGraph<S>> {
    let mut layers = network.layers().to_vec();
    let (region, consumer) = network.channel_region(layer_id);

    let LayerParams::Conv2d { weights, bias } = &layers[layer_id] else {
        unreachable!("checked by conv_width")
    };
    let [_, c_in, kh, kw] = weights.shape().try_into().expect("rank-4 conv weights");
    let per = c_in * kh * kw;
    let mut w = Vec::with_capacity(groups.len() * per);
    let mut b = Vec::with_capacity(groups.len());
    for g in groups {
        w.extend(mean_rows(g.iter().map(|&f| weights.outer(f))));
        b.extend(mean_rows(g.iter().map(|&f| &bias.data()[f..f + 1])));
    }
    layers[layer_id] = LayerParams::conv(
        Tensor::from_vec(&[groups.len(), c_in, kh, kw], w)?,
        Tensor::from_vec(&[groups.len()], b)?,
    )?;

    if let Some(cid) = consumer {
        let plane: usize = match layers[cid].kind() {
            LayerKind::Conv2d => layers[cid].weights().unwrap().shape()[2..].iter().product(),
            _ => {
                let shapes = network.layer_shapes()?;
                let last = region.last().copied().unwrap_or(layer_id);
                shapes[last][1..].iter().product()
            }
        };
        let new_consumer = match &layers[cid] {
            LayerParams::Conv2d { weights, bias } => {
                let s = weights.shape();
                let outs = s[0];
                let mut w = Vec::with_capacity(outs * groups.len() * plane);
                for o in 0..outs {
                    let row = weights.outer(o);
                    for g in groups {
                        w.extend(sum_rows(g.iter().map(|&c| &row[c * plane..(c + 1) * plane])));
                    }
                }
                LayerParams::conv(
                    Tensor::from_vec(&[outs, groups.len(), s[2], s[3]], w)?,
                    bias.clone(),
                )?
            }
            LayerParams::Dense { weights, bias } => {
                let outs = weights.shape()[0];
                let mut w = Vec::with_capacity(outs * groups.len() * plane);
                for o in 0..outs {
                    let row = weights.outer(o);
                    for g in groups {
                        w.extend(sum_rows(g.iter().map(|&c| &row[c * plane..(c + 1) * plane])));
                    }
                }
                LayerParams::dense(Tensor::from_vec(&[outs, groups.len() * plane], w)?, bias.clone())?
            }
            _ => unreachable!("channel_region returns weighted consumers"),
        };
        layers[cid] = new_consumer;
    }
    NetworkGraph::new(
        network.input_shape(),
        layers,
        network.residual_links().to_vec(),
        network.class_count(),
    )
}

/// Elementwise sum of equal-length rows; a single row is copied verbatim.
fn sum_rows<'a, S: Scalar>(mut rows: impl Iterator<Item = &'a [S]>) -> Vec<S> {
    let mut acc = rows.next().expect("non-empty group").to_vec();
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc
}

/// Elementwise mean of equal-length rows; a single row is copied verbatim.
fn mean_rows<'a, S: Scalar>(rows: impl Iterator<Item = &'a [S]> + Clone) -> Vec<S> {
    let count = rows.clone().count();
    let mut acc = sum_rows(rows);
    if count > 1 {
        let scale = S::from_f64(count as f64);
        for a in &mut acc {
            *a = *a / scale;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_model, count_costs, layer_costs, ArchSpec};

    fn vgg() -> NetworkGraph<f64> {
        build_model(&ArchSpec::vgg_tiny(&[8, 8, 6], [2, 8, 8], 4), 5).unwrap()
    }

    fn input(n: usize, shape: [usize; 3], seed: u64) -> Tensor<f64> {
        let len = n * shape.iter().product::<usize>();
        let data = (0..len)
            .map(|i| ((i as f64 + seed as f64 * 0.37) * 1.618).sin())
            .collect();
        Tensor::from_vec(&[n, shape[0], shape[1], shape[2]], data).unwrap()
    }

    #[test]
    fn keep_all_is_identity() {
        let net = vgg();
        let x = input(3, [2, 8, 8], 1);
        for &id in &net.conv_layers() {
            let n = net.layer(id).unwrap().out_channels().unwrap();
            let all: Vec<usize> = (0..n).collect();
            let pruned = prune_layer(&net, id, &all).unwrap();
            assert!(pruned.forward(&x).unwrap().bits_eq(&net.forward(&x).unwrap()));
        }
    }

    #[test]
    fn keeping_half_halves_costs() {
        let net = vgg();
        let before = layer_costs(&net).unwrap();
        let pruned = prune_layer(&net, 0, &[0, 2, 4, 6]).unwrap();
        let after = layer_costs(&pruned).unwrap();
        assert_eq!(after[0].mult_adds * 2, before[0].mult_adds);
        assert_eq!(after[2].mult_adds * 2, before[2].mult_adds);
        assert_eq!(after[4], before[4]);
    }

    #[test]
    fn dense_consumer_loses_whole_channel_blocks() {
        let net = vgg();
        let last = *net.conv_layers().last().unwrap();
        let pruned = prune_layer(&net, last, &[1, 4]).unwrap();
        let (_, consumer) = net.channel_region(last);
        let d_before = net.layer(consumer.unwrap()).unwrap().weights().unwrap();
        let d_after = pruned.layer(consumer.unwrap()).unwrap().weights().unwrap();
        // 8x8 input, two pools -> 2x2 plane
        assert_eq!(d_after.shape()[1], 2 * 4);
        assert_eq!(&d_after.outer(0)[..4], &d_before.outer(0)[4..8]);
        assert_eq!(&d_after.outer(0)[4..], &d_before.outer(0)[16..20]);
        assert!(count_costs(&pruned).unwrap().params < count_costs(&net).unwrap().params);
    }

    #[test]
    fn bad_kept_sets_are_rejected() {
        let net = vgg();
        assert!(prune_layer(&net, 0, &[]).is_err());
        assert!(prune_layer(&net, 0, &[2, 1]).is_err());
        assert!(prune_layer(&net, 0, &[1, 1]).is_err());
        assert!(prune_layer(&net, 0, &[8]).is_err());
        assert!(prune_layer(&net, 1, &[0]).is_err());
    }

    #[test]
    fn residual_layers_need_block_pruning() {
        let spec = ArchSpec::resnet_tiny(&[4, 4, 4, 4, 4], [1, 6, 6], 3);
        let net = build_model::<f64>(&spec, 1).unwrap();
        let blocks = residual_blocks(&net);
        // stem feeds the first skip; third layers are skip targets
        assert!(matches!(prune_layer(&net, 0, &[0]), Err(Error::ResidualConstraint { .. })));
        assert!(matches!(
            prune_layer(&net, blocks[0][2], &[0]),
            Err(Error::ResidualConstraint { .. })
        ));
        assert!(matches!(
            prune_residual_block(&net, 0, &[vec![0], vec![0], vec![0]], ResidualMode::FirstTwo),
            Err(Error::ResidualConstraint { .. })
        ));
        assert!(prune_residual_block(&net, 0, &[vec![0]], ResidualMode::FirstTwo).is_err());
        assert!(prune_residual_block(&net, 5, &[vec![0]], ResidualMode::FirstOnly).is_err());
    }

    #[test]
    fn first_only_shrinks_the_second_layer_input() {
        let spec = ArchSpec::resnet_tiny(&[4, 6, 4], [1, 6, 6], 3);
        let net = build_model::<f64>(&spec, 1).unwrap();
        let [a, b, c] = residual_blocks(&net)[0];
        let pruned = prune_residual_block(&net, 0, &[vec![0, 2, 4]], ResidualMode::FirstOnly).unwrap();
        assert_eq!(pruned.layer(a).unwrap().out_channels(), Some(3));
        assert_eq!(pruned.layer(b).unwrap().in_channels(), Some(3));
        assert_eq!(pruned.layer(c).unwrap(), net.layer(c).unwrap());
        assert_eq!(pruned.residual_links(), net.residual_links());
        let all: Vec<usize> = (0..6).collect();
        let same = prune_residual_block(&net, 0, &[all], ResidualMode::FirstOnly).unwrap();
        let x = input(2, [1, 6, 6], 3);
        assert!(same.forward(&x).unwrap().bits_eq(&net.forward(&x).unwrap()));
    }

    #[test]
    fn averaging_examples() {
        let w = vec![
            1.0, 2.0, //
            3.0, 6.0, //
            -1.0, 0.5, //
            1.0, -0.5,
        ];
        let conv = LayerParams::conv(
            Tensor::from_vec(&[4, 2, 1, 1], w).unwrap(),
            Tensor::from_vec(&[4], vec![1.0, 3.0, 2.0, 2.0]).unwrap(),
        )
        .unwrap();
        let head = LayerParams::dense(
            Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let net = NetworkGraph::new(
            [2, 1, 1],
            vec![conv, LayerParams::Relu, head, LayerParams::SoftmaxXent],
            vec![],
            2,
        )
        .unwrap();
        let avg = average_consecutive(&net, 0).unwrap();
        let w = avg.layer(0).unwrap().weights().unwrap();
        assert_eq!(w.data(), &[2.0, 4.0, 0.0, 0.0]);
        assert_eq!(avg.layer(0).unwrap().bias().unwrap().data(), &[2.0, 2.0]);
        assert_eq!(avg.layer(2).unwrap().weights().unwrap().data(), &[3.0, 7.0, 11.0, 15.0]);
        assert!(average_consecutive(&prune_layer(&net, 0, &[0, 1, 2]).unwrap(), 0).is_err());
    }

    #[test]
    fn identical_pair_averages_to_itself() {
        let f = [0.3, -1.7, 2.25];
        let w: Vec<f64> = f.iter().chain(&f).copied().collect();
        let conv = LayerParams::conv(Tensor::from_vec(&[2, 3, 1, 1], w).unwrap(), Tensor::zeros(&[2])).unwrap();
        let head = LayerParams::dense(Tensor::filled(&[1, 2], 1.0), Tensor::zeros(&[1])).unwrap();
        let net = NetworkGraph::new([3, 1, 1], vec![conv, head], vec![], 1).unwrap();
        let avg = average_consecutive(&net, 0).unwrap();
        assert_eq!(avg.layer(0).unwrap().weights().unwrap().data(), &f);
        // equal feature maps: mean filter + summed consumer preserves the output
        let x = input(2, [3, 1, 1], 0);
        assert!(avg.forward(&x).unwrap().bits_eq(&net.forward(&x).unwrap()));
    }
}
