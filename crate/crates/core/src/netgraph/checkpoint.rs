//! Network checkpoints.
//!
//! A checkpoint is a container with a `NETW` section:
//!
//! ```text
//! dtype        u8        4 = f32, 8 = f64
//! input_shape  u32 × 3   C, H, W
//! class_count  u32
//! n_layers     u32
//! layer table  n_layers × { kind u8, rank u8, dims u32 × rank,
//!                           offset u64, weight_count u64, bias_count u64 }
//! n_links      u32
//! links        n_links × { from u32, into u32 }
//! blob         per weighted layer: weights then bias, little-endian dtype
//! ```
//!
//! `offset` is relative to the start of the blob. Dense weights that follow
//! a conv stack index their input columns channel-major (`c·H·W + y·W + x`).

use std::path::Path;

use crate::container::{put_u32, put_u64, Container, ContainerWriter, Reader, TAG_NETWORK};
use crate::error::{Error, Result};
use crate::tensor::{LayerKind, LayerParams, Scalar, Tensor};

use super::{NetworkGraph, ResidualLink};

fn encode_network<S: Scalar>(network: &NetworkGraph<S>) -> Vec<u8> {
    let mut head = Vec::new();
    let mut blob = Vec::new();
    head.push(S::BYTES);
    for d in network.input_shape() {
        put_u32(&mut head, d as u32);
    }
    put_u32(&mut head, network.class_count() as u32);
    put_u32(&mut head, network.len() as u32);
    for layer in network.layers() {
        head.push(layer.kind().code());
        match (layer.weights(), layer.bias()) {
            (Some(w), Some(b)) => {
                head.push(w.rank() as u8);
                for &d in w.shape() {
                    put_u32(&mut head, d as u32);
                }
                put_u64(&mut head, blob.len() as u64);
                put_u64(&mut head, w.len() as u64);
                put_u64(&mut head, b.len() as u64);
                for &v in w.data().iter().chain(b.data()) {
                    v.write_le(&mut blob);
                }
            }
            _ => {
                head.push(0);
                put_u64(&mut head, blob.len() as u64);
                put_u64(&mut head, 0);
                put_u64(&mut head, 0);
            }
        }
    }
    put_u32(&mut head, network.residual_links().len() as u32);
    for link in network.residual_links() {
        put_u32(&mut head, link.from as u32);
        put_u32(&mut head, link.into as u32);
    }
    head.extend_from_slice(&blob);
    head
}

fn decode_network<S: Scalar>(payload: &[u8]) -> Result<NetworkGraph<S>> {
    let mut r = Reader::new(payload, "NETW");
    let dtype = r.u8()?;
    let read_value: fn(&[u8]) -> f64 = match dtype {
        4 => |b| f32::read_le(b) as f64,
        8 => f64::read_le,
        other => return Err(r.error(format!("unknown dtype width {other}")).into()),
    };
    let input_shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let class_count = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    struct Entry {
        kind: LayerKind,
        dims: Vec<usize>,
        offset: usize,
        weights: usize,
        bias: usize,
    }
    let mut entries = Vec::with_capacity(n_layers.min(1 << 16));
    for i in 0..n_layers {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code)
            .ok_or_else(|| r.error(format!("layer {i}: unknown kind code {code}")))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        entries.push(Entry {
            kind,
            dims,
            offset: r.u64()? as usize,
            weights: r.u64()? as usize,
            bias: r.u64()? as usize,
        });
    }
    let n_links = r.u32()? as usize;
    let mut links = Vec::with_capacity(n_links.min(1 << 16));
    for _ in 0..n_links {
        links.push(ResidualLink {
            from: r.u32()? as usize,
            into: r.u32()? as usize,
        });
    }
    let blob = r.take(r.remaining())?;
    let width = dtype as usize;

    let mut layers = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let layer = match e.kind {
            LayerKind::Relu => LayerParams::Relu,
            LayerKind::MaxPool2x2 => LayerParams::MaxPool2x2,
            LayerKind::SoftmaxXent => LayerParams::SoftmaxXent,
            LayerKind::Conv2d | LayerKind::Dense => {
                if e.dims.iter().product::<usize>() != e.weights {
                    return Err(r.error(format!("layer {i}: shape {:?} vs {} weights", e.dims, e.weights)).into());
                }
                let start = e.offset;
                let end = start + (e.weights + e.bias) * width;
                if end > blob.len() {
                    return Err(r.error(format!("layer {i}: data past end of blob")).into());
                }
                let values: Vec<S> = blob[start..end]
                    .chunks_exact(width)
                    .map(|c| S::from_f64(read_value(c)))
                    .collect();
                let weights = Tensor::from_vec(&e.dims, values[..e.weights].to_vec())?;
                let bias = Tensor::from_vec(&[e.bias], values[e.weights..].to_vec())?;
                if e.kind == LayerKind::Conv2d {
                    LayerParams::conv(weights, bias)?
                } else {
                    LayerParams::dense(weights, bias)?
                }
            }
        };
        layers.push(layer);
    }
    NetworkGraph::new(input_shape, layers, links, class_count)
}

pub fn save_checkpoint<S: Scalar>(network: &NetworkGraph<S>) -> Vec<u8> {
    ContainerWriter::new()
        .section(TAG_NETWORK, encode_network(network))
        .finish()
}

pub fn load_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<NetworkGraph<S>> {
    let container = Container::parse(bytes)?;
    decode_network(container.require(TAG_NETWORK)?)
}

pub fn write_checkpoint<S: Scalar>(network: &NetworkGraph<S>, path: &Path) -> Result<()> {
    std::fs::write(path, save_checkpoint(network)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<NetworkGraph<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}
