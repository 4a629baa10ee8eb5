//! Scaled-down VGG- and ResNet-style builders.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LayerParams, Scalar, Tensor};

use super::{NetworkGraph, ResidualLink};

/// VGG-16's conv widths; desk-scale models divide these down.
pub const VGG16_WIDTHS: [usize; 13] = [
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    VggTiny,
    ResnetTiny,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::VggTiny => "vgg-tiny",
            Family::ResnetTiny => "resnet-tiny",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg-tiny" => Ok(Family::VggTiny),
            "resnet-tiny" => Ok(Family::ResnetTiny),
            other => Err(Error::invalid(format!("unknown model family {other:?}"))),
        }
    }
}

/// Architecture description.
///
/// * `vgg-tiny`: one 3×3 conv + relu per entry of `filters_per_layer`; a 2×2
///   maxpool closes each run of equal widths; then dense(`dense_width`),
///   relu, dense(`class_count`).
/// * `resnet-tiny`: `filters_per_layer = [stem, a₁, b₁, a₂, b₂, …]`. A stem
///   conv is followed by one block per `(a, b)` pair: conv(stem→a), relu,
///   conv(a→b), relu, conv(b→stem) with the block input added to its output,
///   relu. A maxpool and the same dense head follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub filters_per_layer: Vec<usize>,
    pub input_shape: [usize; 3],
    pub class_count: usize,
    #[serde(default = "default_dense_width")]
    pub dense_width: usize,
}

fn default_dense_width() -> usize {
    64
}

impl ArchSpec {
    pub fn vgg_tiny(widths: &[usize], input_shape: [usize; 3], class_count: usize) -> Self {
        Self {
            family: Family::VggTiny,
            filters_per_layer: widths.to_vec(),
            input_shape,
            class_count,
            dense_width: default_dense_width(),
        }
    }

    pub fn resnet_tiny(widths: &[usize], input_shape: [usize; 3], class_count: usize) -> Self {
        Self {
            family: Family::ResnetTiny,
            filters_per_layer: widths.to_vec(),
            input_shape,
            class_count,
            dense_width: default_dense_width(),
        }
    }

    /// The same architecture with every conv width multiplied by `factor`
    /// (rounded, at least 1). The dense head is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.filters_per_layer = self
            .filters_per_layer
            .iter()
            .map(|&w| ((w as f64 * factor).round() as usize).max(1))
            .collect();
        out
    }

    pub fn validate(&self) -> Result<()> {
        let widths = &self.filters_per_layer;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "filters_per_layer must be non-empty and positive, got {widths:?}"
            )));
        }
        if self.input_shape.contains(&0) || self.class_count == 0 || self.dense_width == 0 {
            return Err(Error::invalid("input shape, class count and dense width must be positive"));
        }
        if self.family == Family::ResnetTiny && (widths.len() < 3 || widths.len() % 2 == 0) {
            return Err(Error::invalid(format!(
                "resnet-tiny expects [stem, a1, b1, a2, b2, ...] (odd length >= 3), got {} widths",
                widths.len()
            )));
        }
        Ok(())
    }
}

/// Builds and initialises a network. Weights are drawn uniform in
/// `±sqrt(6 / fan_in)` from a ChaCha8 stream seeded with `seed`, in layer
/// order; biases start at zero.
pub fn build_model<S: Scalar>(spec: &ArchSpec, seed: u64) -> Result<NetworkGraph<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = spec.input_shape;
    let mut layers = Vec::new();
    let mut links = Vec::new();
    let (mut channels, mut height, mut width) = (c, h, w);
    let pool = |layers: &mut Vec<LayerParams<S>>, height: &mut usize, width: &mut usize| {
        if *height < 2 || *width < 2 {
            return Err(Error::invalid(format!(
                "spatial size {height}x{width} too small for another 2x2 pool; use fewer width groups"
            )));
        }
        layers.push(LayerParams::MaxPool2x2);
        *height /= 2;
        *width /= 2;
        Ok(())
    };

    match spec.family {
        Family::VggTiny => {
            let widths = &spec.filters_per_layer;
            for (i, &f) in widths.iter().enumerate() {
                layers.push(init_conv(&mut rng, f, channels, 3)?);
                layers.push(LayerParams::Relu);
                channels = f;
                if widths.get(i + 1) != Some(&f) {
                    pool(&mut layers, &mut height, &mut width)?;
                }
            }
        }
        Family::ResnetTiny => {
            let stem = spec.filters_per_layer[0];
            layers.push(init_conv(&mut rng, stem, channels, 3)?);
            layers.push(LayerParams::Relu);
            channels = stem;
            for pair in spec.filters_per_layer[1..].chunks(2) {
                let block_input = layers.len() - 1;
                layers.push(init_conv(&mut rng, pair[0], channels, 3)?);
                layers.push(LayerParams::Relu);
                layers.push(init_conv(&mut rng, pair[1], pair[0], 3)?);
                layers.push(LayerParams::Relu);
                layers.push(init_conv(&mut rng, stem, pair[1], 3)?);
                links.push(ResidualLink {
                    from: block_input,
                    into: layers.len() - 1,
                });
                layers.push(LayerParams::Relu);
            }
            pool(&mut layers, &mut height, &mut width)?;
        }
    }

    let flat = channels * height * width;
    layers.push(init_dense(&mut rng, spec.dense_width, flat)?);
    layers.push(LayerParams::Relu);
    layers.push(init_dense(&mut rng, spec.class_count, spec.dense_width)?);
    layers.push(LayerParams::SoftmaxXent);
    NetworkGraph::new(spec.input_shape, layers, links, spec.class_count)
}

fn uniform<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect()
}

fn init_conv<S: Scalar>(
    rng: &mut ChaCha8Rng,
    filters: usize,
    channels: usize,
    k: usize,
) -> Result<LayerParams<S>> {
    let shape = [filters, channels, k, k];
    let weights = uniform(rng, shape.iter().product(), channels * k * k);
    LayerParams::conv(Tensor::from_vec(&shape, weights)?, Tensor::zeros(&[filters]))
}

fn init_dense<S: Scalar>(rng: &mut ChaCha8Rng, outs: usize, ins: usize) -> Result<LayerParams<S>> {
    let weights = uniform(rng, outs * ins, ins);
    LayerParams::dense(Tensor::from_vec(&[outs, ins], weights)?, Tensor::zeros(&[outs]))
}

/// The residual blocks of a resnet-tiny graph: for each residual link, the
/// three conv layers it spans (first, second, third).
pub fn residual_blocks<S: Scalar>(network: &NetworkGraph<S>) -> Vec<[usize; 3]> {
    let convs = network.conv_layers();
    network
        .residual_links()
        .iter()
        .filter_map(|link| {
            let inside: Vec<usize> = convs
                .iter()
                .copied()
                .filter(|&c| c > link.from && c <= link.into)
                .collect();
            <[usize; 3]>::try_from(inside).ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LayerKind;

    #[test]
    fn vgg_tiny_has_one_conv_per_width() {
        let spec = ArchSpec::vgg_tiny(&[8, 8, 16, 16], [1, 8, 8], 10);
        let net = build_model::<f32>(&spec, 1).unwrap();
        assert_eq!(net.conv_layers().len(), 4);
        assert_eq!(net.dense_layers().len(), 2);
        let pools = net
            .layers()
            .iter()
            .filter(|l| l.kind() == LayerKind::MaxPool2x2)
            .count();
        assert_eq!(pools, 2);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ArchSpec::vgg_tiny(&[8, 8, 16, 16], [1, 8, 8], 10);
        let a = build_model::<f32>(&spec, 42).unwrap();
        let b = build_model::<f32>(&spec, 42).unwrap();
        let c = build_model::<f32>(&spec, 43).unwrap();
        assert!(a.params_bits_eq(&b));
        assert!(!a.params_bits_eq(&c));
    }

    #[test]
    fn resnet_blocks_by_graph_walk() {
        let spec = ArchSpec::resnet_tiny(&[8, 4, 4, 6, 6], [1, 8, 8], 10);
        let net = build_model::<f64>(&spec, 3).unwrap();
        // stem + 3 per block
        assert_eq!(net.conv_layers().len(), 7);
        assert_eq!(net.residual_links().len(), 2);
        let blocks = residual_blocks(&net);
        assert_eq!(blocks.len(), 2);
        let shapes = net.layer_shapes().unwrap();
        for (block, link) in blocks.iter().zip(net.residual_links()) {
            assert_eq!(block[2], link.into);
            assert_eq!(shapes[link.from], shapes[link.into]);
            // block input is the relu right before the first conv
            assert_eq!(link.from + 1, block[0]);
        }
    }

    #[test]
    fn wrong_template_length_is_rejected() {
        let spec = ArchSpec::resnet_tiny(&[8, 4, 4, 6], [1, 8, 8], 10);
        assert!(build_model::<f32>(&spec, 0).is_err());
        let spec = ArchSpec::vgg_tiny(&[], [1, 8, 8], 10);
        assert!(build_model::<f32>(&spec, 0).is_err());
        // too many pools for 4x4 input
        let spec = ArchSpec::vgg_tiny(&[2, 4, 8], [1, 4, 4], 10);
        assert!(build_model::<f32>(&spec, 0).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in [Family::VggTiny, Family::ResnetTiny] {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }
}
