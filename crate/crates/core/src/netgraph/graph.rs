//! Network topology.
//!
//! Layers form a chain: layer `i` consumes the output of layer `i - 1` (layer
//! 0 consumes the network input). A residual link `(from, into)` adds the
//! output of `from` to the output of `into` before `into`'s consumer sees it.
//! Between the last conv-side layer and the first dense layer the activation
//! is flattened channel-major (`c·H·W + y·W + x`).

use crate::error::{Error, Result};
use crate::tensor::{softmax_xent, LayerKind, LayerParams, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResidualLink {
    pub from: usize,
    pub into: usize,
}

/// Parameter gradients for one layer: `(weights, bias)`.
pub type ParamGrads<S> = Option<(Tensor<S>, Tensor<S>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph<S> {
    input_shape: [usize; 3],
    layers: Vec<LayerParams<S>>,
    residual_links: Vec<ResidualLink>,
    class_count: usize,
}

impl<S: Scalar> NetworkGraph<S> {
    /// Assembles and validates a graph.
    pub fn new(
        input_shape: [usize; 3],
        layers: Vec<LayerParams<S>>,
        residual_links: Vec<ResidualLink>,
        class_count: usize,
    ) -> Result<Self> {
        let graph = Self {
            input_shape,
            layers,
            residual_links,
            class_count,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// A graph with no layers. Only useful as a cost-accounting identity.
    pub fn empty(input_shape: [usize; 3]) -> Self {
        Self {
            input_shape,
            layers: Vec::new(),
            residual_links: Vec::new(),
            class_count: 0,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[LayerParams<S>] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> Option<&LayerParams<S>> {
        self.layers.get(id)
    }

    pub(crate) fn layer_mut(&mut self, id: usize) -> Option<&mut LayerParams<S>> {
        self.layers.get_mut(id)
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams<S>] {
        &mut self.layers
    }

    pub fn residual_links(&self) -> &[ResidualLink] {
        &self.residual_links
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Layers that read the output of `id`.
    pub fn consumers(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if id + 1 < self.layers.len() {
            out.push(id + 1);
        }
        out.extend(
            self.residual_links
                .iter()
                .filter(|l| l.from == id)
                .map(|l| l.into),
        );
        out
    }

    /// Ids of conv layers in network order; `K` is its length.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.ids_of(|k| k == LayerKind::Conv2d)
    }

    pub fn dense_layers(&self) -> Vec<usize> {
        self.ids_of(|k| k == LayerKind::Dense)
    }

    /// Ids of every layer that carries weights.
    pub fn param_layers(&self) -> Vec<usize> {
        self.ids_of(LayerKind::has_weights)
    }

    fn ids_of(&self, pred: impl Fn(LayerKind) -> bool) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| pred(l.kind()))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    /// Layers from `id` through the relu/maxpool layers that follow it, and the
    /// next weighted layer (the consumer whose input channels track `id`'s
    /// filters), if any.
    pub fn channel_region(&self, id: usize) -> (Vec<usize>, Option<usize>) {
        let mut region = vec![id];
        let mut next = id + 1;
        while let Some(layer) = self.layers.get(next) {
            match layer.kind() {
                LayerKind::Relu | LayerKind::MaxPool2x2 => region.push(next),
                LayerKind::Conv2d | LayerKind::Dense => return (region, Some(next)),
                LayerKind::SoftmaxXent => break,
            }
            next += 1;
        }
        (region, None)
    }

    /// The layer whose output is taken as `id`'s post-activation feature map:
    /// the first relu following it in its channel region, or `id` itself.
    pub fn activation_layer(&self, id: usize) -> usize {
        let (region, _) = self.channel_region(id);
        region
            .iter()
            .copied()
            .find(|&r| self.layers[r].kind() == LayerKind::Relu)
            .unwrap_or(id)
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.to_vec();
        for (id, layer) in self.layers.iter().enumerate() {
            current = layer
                .output_shape(&current)
                .map_err(|e| name_layer(e, id, layer.kind()))?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    /// Per-sample input shape of layer `id`.
    pub fn input_shape_of(&self, id: usize) -> Result<Vec<usize>> {
        if id == 0 {
            return Ok(self.input_shape.to_vec());
        }
        Ok(self.layer_shapes()?[id - 1].clone())
    }

    /// Checks channel compatibility, residual endpoints and the class head.
    pub fn validate(&self) -> Result<()> {
        for (id, layer) in self.layers.iter().enumerate() {
            layer
                .check_params()
                .map_err(|e| Error::Graph(format!("layer {id}: {e}")))?;
        }
        let shapes = self.layer_shapes()?;
        for link in &self.residual_links {
            if link.from >= link.into || link.into >= self.layers.len() {
                return Err(Error::Graph(format!(
                    "residual link {} -> {} must point forward within {} layers",
                    link.from,
                    link.into,
                    self.layers.len()
                )));
            }
            if shapes[link.from] != shapes[link.into] {
                return Err(Error::Shape {
                    layer: format!("residual add {} -> {}", link.from, link.into),
                    expected: shapes[link.into].clone(),
                    actual: shapes[link.from].clone(),
                });
            }
        }
        if let Some(last) = shapes.last() {
            let outputs: usize = last.iter().product();
            if outputs != self.class_count {
                return Err(Error::Graph(format!(
                    "network emits {outputs} outputs but class_count is {}",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::Shape {
                layer: "network input".into(),
                expected: [&[0][..], &self.input_shape[..]].concat(),
                actual: s.to_vec(),
            });
        }
        Ok(())
    }

    /// Runs layers `0..end` and returns every intermediate output (post
    /// residual add). Errors on a non-finite activation, naming the layer.
    pub fn forward_trace(&self, input: &Tensor<S>, end: usize) -> Result<Vec<Tensor<S>>> {
        self.check_input(input)?;
        let mut outputs: Vec<Tensor<S>> = Vec::with_capacity(end);
        for id in 0..end.min(self.layers.len()) {
            let layer = &self.layers[id];
            let source = if id == 0 { input } else { &outputs[id - 1] };
            let mut out = layer
                .apply(source)
                .map_err(|e| name_layer(e, id, layer.kind()))?;
            for link in self.residual_links.iter().filter(|l| l.into == id) {
                let skip = &outputs[link.from];
                for (o, &s) in out.data_mut().iter_mut().zip(skip.data()) {
                    *o += s;
                }
            }
            out.ensure_finite(&format!("output of layer {id} ({})", layer.kind()))?;
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Number of layers before the trailing softmax (if any).
    pub fn logits_end(&self) -> usize {
        match self.layers.last() {
            Some(l) if l.kind() == LayerKind::SoftmaxXent => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Pre-softmax scores, `N × class_count`.
    pub fn logits(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let end = self.logits_end();
        if end == 0 {
            return Err(Error::Graph("network has no layers".into()));
        }
        let mut trace = self.forward_trace(input, end)?;
        let out = trace.pop().expect("non-empty trace");
        let n = out.shape()[0];
        out.reshape(&[n, self.class_count])
    }

    /// Full forward pass including the final layer.
    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut trace = self.forward_trace(input, self.layers.len())?;
        trace
            .pop()
            .ok_or_else(|| Error::Graph("network has no layers".into()))
    }

    /// Mean cross-entropy loss of a batch.
    pub fn loss(&self, input: &Tensor<S>, labels: &[usize]) -> Result<S> {
        Ok(softmax_xent(&self.logits(input)?, labels)?.0)
    }

    /// Loss and per-layer parameter gradients of the mean cross-entropy,
    /// without touching the network's gradient slots. Also returns the
    /// forward trace so callers can reuse activations.
    pub fn gradients(
        &self,
        input: &Tensor<S>,
        labels: &[usize],
    ) -> Result<(S, Vec<ParamGrads<S>>, Vec<Tensor<S>>)> {
        let end = self.logits_end();
        if end == 0 {
            return Err(Error::Graph("network has no layers".into()));
        }
        let trace = self.forward_trace(input, end)?;
        let last = &trace[end - 1];
        let n = last.shape()[0];
        let logits = last.clone().reshape(&[n, self.class_count])?;
        let (loss, grad_logits) = softmax_xent(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        let mut pending: Vec<Option<Tensor<S>>> = vec![None; end];
        pending[end - 1] = Some(grad_logits.reshape(last.shape())?);
        let mut grads: Vec<ParamGrads<S>> = vec![None; self.layers.len()];
        for id in (0..end).rev() {
            let Some(upstream) = pending[id].take() else {
                continue;
            };
            for link in self.residual_links.iter().filter(|l| l.into == id) {
                accumulate(&mut pending[link.from], &upstream);
            }
            let layer = &self.layers[id];
            let source = if id == 0 { input } else { &trace[id - 1] };
            let lg = layer
                .backprop(source, &upstream)
                .map_err(|e| name_layer(e, id, layer.kind()))?;
            if let (Some(w), Some(b)) = (lg.weights, lg.bias) {
                grads[id] = Some((w, b));
            }
            if id > 0 {
                accumulate(&mut pending[id - 1], &lg.input);
            }
        }
        Ok((loss, grads, trace))
    }

    /// Computes gradients for a batch and stores them in each layer's weight
    /// and bias gradient slots (overwriting previous values).
    pub fn backward(&mut self, input: &Tensor<S>, labels: &[usize]) -> Result<S> {
        let (loss, grads, _) = self.gradients(input, labels)?;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            if let (Some((gw, gb)), Some((w, b))) = (g, layer.params_mut()) {
                w.set_grad(gw.into_data())?;
                b.set_grad(gb.into_data())?;
            }
        }
        Ok(loss)
    }

    /// Replaces layer `id`'s parameters, re-validating the graph.
    pub fn replace_layer(&mut self, id: usize, layer: LayerParams<S>) -> Result<()> {
        let slot = self
            .layers
            .get_mut(id)
            .ok_or_else(|| Error::invalid(format!("no layer {id}")))?;
        let old = std::mem::replace(slot, layer);
        if let Err(e) = self.validate() {
            self.layers[id] = old;
            return Err(e);
        }
        Ok(())
    }

    /// Converts every parameter to another precision.
    pub fn cast<T: Scalar>(&self) -> NetworkGraph<T> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv2d { weights, bias } => LayerParams::Conv2d {
                    weights: weights.cast(),
                    bias: bias.cast(),
                },
                LayerParams::Dense { weights, bias } => LayerParams::Dense {
                    weights: weights.cast(),
                    bias: bias.cast(),
                },
                LayerParams::Relu => LayerParams::Relu,
                LayerParams::MaxPool2x2 => LayerParams::MaxPool2x2,
                LayerParams::SoftmaxXent => LayerParams::SoftmaxXent,
            })
            .collect();
        NetworkGraph {
            input_shape: self.input_shape,
            layers,
            residual_links: self.residual_links.clone(),
            class_count: self.class_count,
        }
    }

    /// Bitwise equality of every parameter.
    pub fn params_bits_eq(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.kind() == b.kind()
                    && match (a.weights(), b.weights()) {
                        (Some(wa), Some(wb)) => {
                            wa.bits_eq(wb) && a.bias().unwrap().bits_eq(b.bias().unwrap())
                        }
                        (None, None) => true,
                        _ => false,
                    }
            })
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, grad: &Tensor<S>) {
    match slot {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a += b;
            }
        }
        None => *slot = Some(grad.clone()),
    }
}

fn name_layer(err: Error, id: usize, kind: LayerKind) -> Error {
    match err {
        Error::Shape {
            expected, actual, ..
        } => Error::Shape {
            layer: format!("layer {id} ({kind})"),
            expected,
            actual,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkGraph<f64> {
        let conv = LayerParams::conv(
            Tensor::filled(&[2, 1, 3, 3], 0.1),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let dense = LayerParams::dense(Tensor::filled(&[3, 2 * 4 * 4], 0.01), Tensor::zeros(&[3]))
            .unwrap();
        NetworkGraph::new(
            [1, 4, 4],
            vec![conv, LayerParams::Relu, dense, LayerParams::SoftmaxXent],
            vec![],
            3,
        )
        .unwrap()
    }

    #[test]
    fn consumers_follow_chain_and_links() {
        let g = tiny();
        assert_eq!(g.consumers(0), vec![1]);
        assert_eq!(g.consumers(3), Vec::<usize>::new());
        assert_eq!(g.conv_layers(), vec![0]);
        assert_eq!(g.channel_region(0), (vec![0, 1], Some(2)));
        assert_eq!(g.activation_layer(0), 1);
    }

    #[test]
    fn class_head_mismatch_is_rejected() {
        let g = tiny();
        let err = NetworkGraph::new(g.input_shape, g.layers.clone(), vec![], 4).unwrap_err();
        assert!(matches!(err, Error::Graph(_)));
    }

    #[test]
    fn channel_mismatch_names_layer() {
        let g = tiny();
        let mut layers = g.layers.clone();
        layers[2] = LayerParams::dense(Tensor::zeros(&[3, 31]), Tensor::zeros(&[3])).unwrap();
        match NetworkGraph::new([1, 4, 4], layers, vec![], 3).unwrap_err() {
            Error::Shape { layer, .. } => assert!(layer.starts_with("layer 2"), "{layer}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn backward_link_is_rejected() {
        let g = tiny();
        let err = NetworkGraph::new(
            [1, 4, 4],
            g.layers.clone(),
            vec![ResidualLink { from: 1, into: 0 }],
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Graph(_)));
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let g = tiny();
        assert!(g.logits(&Tensor::zeros(&[1, 2, 4, 4])).is_err());
        let logits = g.logits(&Tensor::filled(&[2, 1, 4, 4], 1.0)).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
    }
}
