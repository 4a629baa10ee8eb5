//! Forward and backward rules for the five layer kinds.
//!
//! Activations are batched: conv, relu and maxpool take `N × C × H × W`;
//! dense takes `N × ...` and flattens each sample in channel-major order.
//! Every output element of conv and dense is accumulated in a fixed order
//! (bias first, then input channel, kernel row, kernel column), so removing
//! an input channel whose weights are all zero leaves the result bit-exact.

use std::fmt;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Dense,
    Relu,
    MaxPool2x2,
    SoftmaxXent,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Dense => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2x2 => "maxpool2x2",
            LayerKind::SoftmaxXent => "softmax-xent",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            LayerKind::Conv2d => 1,
            LayerKind::Dense => 2,
            LayerKind::Relu => 3,
            LayerKind::MaxPool2x2 => 4,
            LayerKind::SoftmaxXent => 5,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => LayerKind::Conv2d,
            2 => LayerKind::Dense,
            3 => LayerKind::Relu,
            4 => LayerKind::MaxPool2x2,
            5 => LayerKind::SoftmaxXent,
            _ => return None,
        })
    }

    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::Dense)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One layer and its parameters.
///
/// Conv weights are `n_k × i_k × kh × kw` with odd kernel sizes (stride 1,
/// same padding); dense weights are `out × in`. Biases are always present.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<S> {
    Conv2d { weights: Tensor<S>, bias: Tensor<S> },
    Dense { weights: Tensor<S>, bias: Tensor<S> },
    Relu,
    MaxPool2x2,
    SoftmaxXent,
}

/// Gradients produced by [`LayerParams::backprop`].
#[derive(Debug, Clone)]
pub struct LayerGrads<S> {
    pub input: Tensor<S>,
    pub weights: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn conv(weights: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let layer = LayerParams::Conv2d { weights, bias };
        layer.check_params()?;
        Ok(layer)
    }

    pub fn dense(weights: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let layer = LayerParams::Dense { weights, bias };
        layer.check_params()?;
        Ok(layer)
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Conv2d { .. } => LayerKind::Conv2d,
            LayerParams::Dense { .. } => LayerKind::Dense,
            LayerParams::Relu => LayerKind::Relu,
            LayerParams::MaxPool2x2 => LayerKind::MaxPool2x2,
            LayerParams::SoftmaxXent => LayerKind::SoftmaxXent,
        }
    }

    pub fn weights(&self) -> Option<&Tensor<S>> {
        match self {
            LayerParams::Conv2d { weights, .. } | LayerParams::Dense { weights, .. } => {
                Some(weights)
            }
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor<S>> {
        match self {
            LayerParams::Conv2d { bias, .. } | LayerParams::Dense { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor<S>, &mut Tensor<S>)> {
        match self {
            LayerParams::Conv2d { weights, bias } | LayerParams::Dense { weights, bias } => {
                Some((weights, bias))
            }
            _ => None,
        }
    }

    /// Output channels (filters) for conv, output units for dense.
    pub fn out_channels(&self) -> Option<usize> {
        self.weights().map(|w| w.shape()[0])
    }

    /// Input channels for conv, input features for dense.
    pub fn in_channels(&self) -> Option<usize> {
        self.weights().map(|w| w.shape()[1])
    }

    pub fn param_count(&self) -> usize {
        self.weights().map_or(0, |w| w.len()) + self.bias().map_or(0, |b| b.len())
    }

    pub fn zero_grads(&mut self) {
        if let Some((w, b)) = self.params_mut() {
            w.zero_grad();
            b.zero_grad();
        }
    }

    pub(crate) fn check_params(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Graph(msg));
        match self {
            LayerParams::Conv2d { weights, bias } => {
                let s = weights.shape();
                if s.len() != 4 {
                    return bad(format!("conv weights must be rank 4, got shape {s:?}"));
                }
                if s[2] % 2 == 0 || s[3] % 2 == 0 {
                    return bad(format!("conv kernel must have odd extents, got {s:?}"));
                }
                if bias.shape() != [s[0]] {
                    return bad(format!(
                        "conv bias shape {:?} does not match {} filters",
                        bias.shape(),
                        s[0]
                    ));
                }
            }
            LayerParams::Dense { weights, bias } => {
                let s = weights.shape();
                if s.len() != 2 {
                    return bad(format!("dense weights must be rank 2, got shape {s:?}"));
                }
                if bias.shape() != [s[0]] {
                    return bad(format!(
                        "dense bias shape {:?} does not match {} outputs",
                        bias.shape(),
                        s[0]
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerParams::Conv2d { weights, .. } => {
                if input.len() != 3 || input[0] != weights.shape()[1] {
                    return Err(self.shape_error(&[weights.shape()[1], 0, 0], input));
                }
                Ok(vec![weights.shape()[0], input[1], input[2]])
            }
            LayerParams::Dense { weights, .. } => {
                let features: usize = input.iter().product();
                if features != weights.shape()[1] {
                    return Err(self.shape_error(&[weights.shape()[1]], &[features]));
                }
                Ok(vec![weights.shape()[0]])
            }
            LayerParams::Relu | LayerParams::SoftmaxXent => Ok(input.to_vec()),
            LayerParams::MaxPool2x2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(self.shape_error(&[0, 2, 2], input));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
        }
    }

    fn shape_error(&self, expected: &[usize], actual: &[usize]) -> Error {
        Error::Shape {
            layer: self.kind().name().to_string(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// Forward pass over a batch.
    pub fn apply(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = input.shape();
        if shape.is_empty() {
            return Err(self.shape_error(&[0], shape));
        }
        let batch = shape[0];
        let out_sample = self.output_shape(&shape[1..])?;
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&out_sample);
        let mut out = Tensor::zeros(&out_shape);
        match self {
            LayerParams::Conv2d { weights, bias } => {
                conv_forward(weights, bias, input, &mut out);
            }
            LayerParams::Dense { weights, bias } => {
                dense_forward(weights, bias, input, &mut out);
            }
            LayerParams::Relu => {
                for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
                    *o = if x > S::zero() { x } else { S::zero() };
                }
            }
            LayerParams::MaxPool2x2 => maxpool_forward(input, &mut out),
            LayerParams::SoftmaxXent => {
                let classes = out_sample.iter().product();
                for b in 0..batch {
                    softmax_into(input.outer(b), out.outer_mut(b), classes);
                }
            }
        }
        Ok(out)
    }

    /// Backward pass: gradient w.r.t. the input and, for weighted layers, the
    /// parameters. `input` is the tensor that was fed to [`apply`](Self::apply).
    pub fn backprop(&self, input: &Tensor<S>, upstream: &Tensor<S>) -> Result<LayerGrads<S>> {
        let shape = input.shape();
        if shape.is_empty() {
            return Err(self.shape_error(&[0], shape));
        }
        let mut expected = vec![shape[0]];
        expected.extend(self.output_shape(&shape[1..])?);
        if upstream.shape() != expected.as_slice() {
            return Err(self.shape_error(&expected, upstream.shape()));
        }
        let mut input_grad = Tensor::zeros(shape);
        let (mut wg, mut bg) = (None, None);
        match self {
            LayerParams::Conv2d { weights, .. } => {
                let mut w = Tensor::zeros(weights.shape());
                let mut b = Tensor::zeros(&[weights.shape()[0]]);
                conv_backward(weights, input, upstream, &mut input_grad, &mut w, &mut b);
                wg = Some(w);
                bg = Some(b);
            }
            LayerParams::Dense { weights, .. } => {
                let mut w = Tensor::zeros(weights.shape());
                let mut b = Tensor::zeros(&[weights.shape()[0]]);
                dense_backward(weights, input, upstream, &mut input_grad, &mut w, &mut b);
                wg = Some(w);
                bg = Some(b);
            }
            LayerParams::Relu => {
                let gi = input_grad.data_mut();
                for ((g, &x), &u) in gi.iter_mut().zip(input.data()).zip(upstream.data()) {
                    *g = if x > S::zero() { u } else { S::zero() };
                }
            }
            LayerParams::MaxPool2x2 => maxpool_backward(input, upstream, &mut input_grad),
            LayerParams::SoftmaxXent => {
                let classes: usize = shape[1..].iter().product();
                let mut probs = vec![S::zero(); classes];
                for b in 0..shape[0] {
                    softmax_into(input.outer(b), &mut probs, classes);
                    let up = upstream.outer(b);
                    let dot: S = probs.iter().zip(up).map(|(&p, &u)| p * u).sum();
                    for ((g, &p), &u) in input_grad.outer_mut(b).iter_mut().zip(&probs).zip(up) {
                        *g = p * (u - dot);
                    }
                }
            }
        }
        Ok(LayerGrads {
            input: input_grad,
            weights: wg,
            bias: bg,
        })
    }
}

fn softmax_into<S: Scalar>(logits: &[S], out: &mut [S], classes: usize) {
    let max = logits[..classes]
        .iter()
        .copied()
        .fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits (`N × classes`).
pub fn softmax_xent<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape {
            layer: "softmax-xent".into(),
            expected: vec![labels.len(), 0],
            actual: shape.to_vec(),
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    let scale = S::one() / S::from_f64(batch as f64);
    let mut grad = Tensor::zeros(shape);
    let mut loss = S::zero();
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let g = grad.outer_mut(b);
        softmax_into(logits.outer(b), g, classes);
        loss -= g[label].max(S::min_positive_value()).ln();
        g[label] -= S::one();
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}

fn conv_dims<S: Scalar>(weights: &Tensor<S>, input: &Tensor<S>) -> [usize; 8] {
    let w = weights.shape();
    let x = input.shape();
    // batch, in, h, w, filters, kh, kw, (unused)
    [x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0]
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `d`.
#[inline]
fn valid_range(extent: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (extent as isize - d).clamp(0, extent as isize) as usize;
    (lo.min(hi), hi)
}

fn conv_forward<S: Scalar>(weights: &Tensor<S>, bias: &Tensor<S>, input: &Tensor<S>, out: &mut Tensor<S>) {
    let [batch, cin, h, w, filters, kh, kw, _] = conv_dims(weights, input);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let plane = h * w;
    let wd = weights.data();
    let xd = input.data();
    let od = out.data_mut();
    for b in 0..batch {
        for f in 0..filters {
            let o = &mut od[(b * filters + f) * plane..(b * filters + f + 1) * plane];
            o.iter_mut().for_each(|v| *v = bias.data()[f]);
            for c in 0..cin {
                let xc = &xd[(b * cin + c) * plane..(b * cin + c + 1) * plane];
                let wfc = &wd[(f * cin + c) * kh * kw..(f * cin + c + 1) * kh * kw];
                for ky in 0..kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..kw {
                        let dx = kx as isize - pw;
                        let (x0, x1) = valid_range(w, dx);
                        let wt = wfc[ky * kw + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let orow = &mut o[y * w + x0..y * w + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let irow = &xc[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (ov, &iv) in orow.iter_mut().zip(irow) {
                                *ov += wt * iv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward<S: Scalar>(
    weights: &Tensor<S>,
    input: &Tensor<S>,
    upstream: &Tensor<S>,
    input_grad: &mut Tensor<S>,
    weight_grad: &mut Tensor<S>,
    bias_grad: &mut Tensor<S>,
) {
    let [batch, cin, h, w, filters, kh, kw, _] = conv_dims(weights, input);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let plane = h * w;
    let wd = weights.data();
    let xd = input.data();
    let gd = upstream.data();
    let gi = input_grad.data_mut();
    let gw = weight_grad.data_mut();
    let gb = bias_grad.data_mut();
    for b in 0..batch {
        for f in 0..filters {
            let g = &gd[(b * filters + f) * plane..(b * filters + f + 1) * plane];
            gb[f] += g.iter().copied().sum::<S>();
            for c in 0..cin {
                let base = (b * cin + c) * plane;
                let woff = (f * cin + c) * kh * kw;
                for ky in 0..kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..kw {
                        let dx = kx as isize - pw;
                        let (x0, x1) = valid_range(w, dx);
                        let wt = wd[woff + ky * kw + kx];
                        let sx0 = (x0 as isize + dx) as usize;
                        let mut acc = S::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &g[y * w + x0..y * w + x1];
                            let start = base + sy * w + sx0;
                            let irow = &xd[start..start + (x1 - x0)];
                            for (&gv, &iv) in grow.iter().zip(irow) {
                                acc += gv * iv;
                            }
                            let girow = &mut gi[start..start + (x1 - x0)];
                            for (d, &gv) in girow.iter_mut().zip(grow) {
                                *d += wt * gv;
                            }
                        }
                        gw[woff + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
}

fn dense_forward<S: Scalar>(weights: &Tensor<S>, bias: &Tensor<S>, input: &Tensor<S>, out: &mut Tensor<S>) {
    let (outs, ins) = (weights.shape()[0], weights.shape()[1]);
    let batch = input.shape()[0];
    for b in 0..batch {
        let x = &input.data()[b * ins..(b + 1) * ins];
        let o = out.outer_mut(b);
        for (j, ov) in o.iter_mut().enumerate().take(outs) {
            let row = &weights.data()[j * ins..(j + 1) * ins];
            let mut acc = bias.data()[j];
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            *ov = acc;
        }
    }
}

fn dense_backward<S: Scalar>(
    weights: &Tensor<S>,
    input: &Tensor<S>,
    upstream: &Tensor<S>,
    input_grad: &mut Tensor<S>,
    weight_grad: &mut Tensor<S>,
    bias_grad: &mut Tensor<S>,
) {
    let (outs, ins) = (weights.shape()[0], weights.shape()[1]);
    let batch = input.shape()[0];
    for b in 0..batch {
        let x = &input.data()[b * ins..(b + 1) * ins];
        let g = upstream.outer(b);
        let gi = &mut input_grad.data_mut()[b * ins..(b + 1) * ins];
        for j in 0..outs {
            let gj = g[j];
            bias_grad.data_mut()[j] += gj;
            let row = &weights.data()[j * ins..(j + 1) * ins];
            for (d, &wv) in gi.iter_mut().zip(row) {
                *d += wv * gj;
            }
            let wrow = &mut weight_grad.data_mut()[j * ins..(j + 1) * ins];
            for (d, &xv) in wrow.iter_mut().zip(x) {
                *d += gj * xv;
            }
        }
    }
}

fn maxpool_forward<S: Scalar>(input: &Tensor<S>, out: &mut Tensor<S>) {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let od = out.data_mut();
    for nc in 0..n * c {
        let x = &input.data()[nc * h * w..(nc + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let (r, q) = (2 * y, 2 * xo);
                let m = x[r * w + q]
                    .max(x[r * w + q + 1])
                    .max(x[(r + 1) * w + q])
                    .max(x[(r + 1) * w + q + 1]);
                od[nc * oh * ow + y * ow + xo] = m;
            }
        }
    }
}

fn maxpool_backward<S: Scalar>(input: &Tensor<S>, upstream: &Tensor<S>, input_grad: &mut Tensor<S>) {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let gi = input_grad.data_mut();
    for nc in 0..n * c {
        let x = &input.data()[nc * h * w..(nc + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let cells = [
                    2 * y * w + 2 * xo,
                    2 * y * w + 2 * xo + 1,
                    (2 * y + 1) * w + 2 * xo,
                    (2 * y + 1) * w + 2 * xo + 1,
                ];
                // first maximum in scan order receives the gradient
                let mut best = cells[0];
                for &cell in &cells[1..] {
                    if x[cell] > x[best] {
                        best = cell;
                    }
                }
                gi[nc * h * w + best] += upstream.data()[nc * oh * ow + y * ow + xo];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_layer(weights: Vec<f64>, shape: [usize; 4], bias: Vec<f64>) -> LayerParams<f64> {
        LayerParams::conv(
            Tensor::from_vec(&shape, weights).unwrap(),
            Tensor::from_vec(&[shape[0]], bias).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_conv_gives_zero_output() {
        let layer = conv_layer(vec![0.0; 2 * 3 * 9], [2, 3, 3, 3], vec![0.0; 2]);
        let input = Tensor::filled(&[2, 3, 5, 5], 1.7);
        let out = layer.apply(&input).unwrap();
        assert_eq!(out.shape(), &[2, 2, 5, 5]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_1x1_conv() {
        let mut w = vec![0.0; 3 * 3];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let layer = conv_layer(w, [3, 3, 1, 1], vec![0.0; 3]);
        let data: Vec<f64> = (0..3 * 16).map(|i| (i as f64 * 0.37).sin()).collect();
        let input = Tensor::from_vec(&[1, 3, 4, 4], data).unwrap();
        assert!(layer.apply(&input).unwrap().bits_eq(&input));
    }

    #[test]
    fn ones_3x3_counts_receptive_field() {
        let layer = conv_layer(vec![1.0; 9], [1, 1, 3, 3], vec![0.0]);
        let out = layer.apply(&Tensor::filled(&[1, 1, 4, 4], 1.0)).unwrap();
        let o = out.data();
        // corners see 2×2, edges 2×3, interior 3×3
        assert_eq!(o[0], 4.0);
        assert_eq!(o[3], 4.0);
        assert_eq!(o[12], 4.0);
        assert_eq!(o[15], 4.0);
        assert_eq!(o[1], 6.0);
        assert_eq!(o[5], 9.0);
        assert_eq!(o[10], 9.0);
    }

    #[test]
    fn conv_channel_mismatch_is_described() {
        let layer = conv_layer(vec![0.0; 9 * 2], [1, 2, 3, 3], vec![0.0]);
        let err = layer.apply(&Tensor::zeros(&[1, 3, 4, 4])).unwrap_err();
        match err {
            Error::Shape { layer, expected, actual } => {
                assert_eq!(layer, "conv2d");
                assert_eq!(expected[0], 2);
                assert_eq!(actual[0], 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn even_kernel_is_rejected() {
        let w = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(LayerParams::conv(w, Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let layer = conv_layer((0..18).map(|i| i as f64 * 0.1).collect(), [2, 1, 3, 3], vec![0.3, -0.2]);
        let input = Tensor::filled(&[1, 1, 4, 4], 0.5);
        let grads = layer.backprop(&input, &Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_blocks_gradient_at_negative_input() {
        let input = Tensor::<f64>::from_vec(&[1, 4], vec![-1.0, 2.0, -0.5, 0.0]).unwrap();
        let g = LayerParams::Relu
            .backprop(&input, &Tensor::filled(&[1, 4], 1.0))
            .unwrap();
        assert_eq!(g.input.data(), &[0.0, 1.0, 0.0, 0.0]);
        let out = LayerParams::Relu.apply(&input).unwrap();
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn maxpool_routes_gradient_to_first_max() {
        let input =
            Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 3.0, 3.0, 2.0]).unwrap();
        let out = LayerParams::MaxPool2x2.apply(&input).unwrap();
        assert_eq!(out.data(), &[3.0]);
        let g = LayerParams::MaxPool2x2
            .backprop(&input, &Tensor::filled(&[1, 1, 1, 1], 1.0))
            .unwrap();
        assert_eq!(g.input.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_xent_gradient_sums_to_zero() {
        let logits = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = softmax_xent(&logits, &[2, 0]).unwrap();
        assert!(loss > 0.0);
        for b in 0..2 {
            let s: f64 = grad.outer(b).iter().sum();
            assert!(s.abs() < 1e-15);
        }
        // uniform logits: loss term is ln 3
        let (l2, _) = softmax_xent(&logits.clone(), &[0, 0]).unwrap();
        let expected = (-(1.0f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln() + 3f64.ln()) / 2.0;
        assert!((l2 - expected).abs() < 1e-12);
    }

    /// Central finite differences on a random small conv, checking the
    /// analytic weight gradient of `sum(output * probe)`.
    #[test]
    fn conv_weight_grad_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let shape = [3, 2, 3, 3];
        let weights: Vec<f64> = (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(
            &[2, 2, 5, 4],
            (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let probe: Vec<f64> = (0..2 * 3 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |w: &[f64]| {
            let layer = conv_layer(w.to_vec(), shape, bias.clone());
            let out = layer.apply(&input).unwrap();
            out.data().iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let layer = conv_layer(weights.clone(), shape, bias.clone());
        let up = Tensor::from_vec(&[2, 3, 5, 4], probe.clone()).unwrap();
        let grads = layer.backprop(&input, &up).unwrap();
        let analytic = grads.weights.unwrap();
        let eps = 1e-6;
        for i in 0..weights.len() {
            let mut plus = weights.clone();
            plus[i] += eps;
            let mut minus = weights.clone();
            minus[i] -= eps;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "weight {i}: analytic {a}, numeric {numeric}");
        }
        // input gradient, same objective
        let eps = 1e-6;
        for i in (0..80).step_by(7) {
            let mut xp = input.clone();
            xp.data_mut()[i] += eps;
            let mut xm = input.clone();
            xm.data_mut()[i] -= eps;
            let f = |x: &Tensor<f64>| {
                layer.apply(x).unwrap().data().iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
            };
            let numeric = (f(&xp) - f(&xm)) / (2.0 * eps);
            let a = grads.input.data()[i];
            assert!((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8) < 1e-4);
        }
    }
}
