//! Per-filter activation and gradient statistics, gathered in one data pass.
//!
//! For every conv layer and filter the bundle tracks:
//!
//! * the sum over images of the spatial mean of the filter's post-activation
//!   feature map (mean activation),
//! * exact-zero and total element counts of that map (APoZ),
//! * a histogram over images of the spatial mean, with `bins` equal-width
//!   bins on `[0, max]` where `max` is the largest spatial mean seen in a
//!   first pass (entropy),
//! * optionally the sum over images of `‖∂L/∂F‖₁`, overall and per class
//!   label (sensitivity, class-specific importance).
//!
//! Real-valued sums are kept as fixed-point integers ([`FixedSum`]) so that
//! merging shards is exactly associative and order-independent.

use std::path::Path;

use crate::container::{put_u32, put_u64, Container, ContainerWriter, Reader, TAG_STATS};
use crate::error::{CheckpointError, Error, Result};
use crate::harness::Dataset;
use crate::netgraph::NetworkGraph;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BINS: usize = 10;
const BATCH: usize = 64;

/// Fixed-point accumulator with 2⁻⁴⁰ resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FixedSum(i128);

impl FixedSum {
    const SCALE: f64 = (1u64 << 40) as f64;

    pub fn from_f64(v: f64) -> Self {
        FixedSum((v * Self::SCALE).round() as i128)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / Self::SCALE
    }

    pub fn add(&mut self, v: f64) {
        self.0 += Self::from_f64(v).0;
    }

    pub fn raw(self) -> i128 {
        self.0
    }
}

impl std::ops::Add for FixedSum {
    type Output = FixedSum;
    fn add(self, rhs: Self) -> Self {
        FixedSum(self.0 + rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsOptions {
    pub with_gradients: bool,
    pub bins: usize,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            with_gradients: false,
            bins: DEFAULT_BINS,
        }
    }
}

/// Statistics of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer_id: usize,
    /// Histogram range `(lo, hi)`; the last bin is closed on the right.
    pub bin_range: (f64, f64),
    pub sum_activation: Vec<FixedSum>,
    pub zero_count: Vec<u64>,
    pub element_count: Vec<u64>,
    /// `histogram[filter][bin]`.
    pub histogram: Vec<Vec<u64>>,
    pub grad_l1_sum: Vec<FixedSum>,
    /// `class_grad_l1_sum[class][filter]`.
    pub class_grad_l1_sum: Vec<Vec<FixedSum>>,
}

impl LayerStats {
    pub fn filters(&self) -> usize {
        self.sum_activation.len()
    }

    fn empty(layer_id: usize, filters: usize, bins: usize, range: (f64, f64), classes: usize) -> Self {
        Self {
            layer_id,
            bin_range: range,
            sum_activation: vec![FixedSum::default(); filters],
            zero_count: vec![0; filters],
            element_count: vec![0; filters],
            histogram: vec![vec![0; bins]; filters],
            grad_l1_sum: vec![FixedSum::default(); filters],
            class_grad_l1_sum: vec![vec![FixedSum::default(); filters]; classes],
        }
    }

    /// Bin of a per-image mean value.
    pub fn bin_of(&self, value: f64) -> usize {
        let bins = self.histogram.first().map_or(1, Vec::len);
        let (lo, hi) = self.bin_range;
        if hi <= lo || value <= lo {
            return 0;
        }
        (((value - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsBundle {
    pub bins: usize,
    pub with_gradients: bool,
    /// Images seen by the activation accumulators.
    pub images: u64,
    /// Images seen by the gradient accumulators.
    pub grad_images: u64,
    /// Gradient-pass images per class label.
    pub class_images: Vec<u64>,
    pub layers: Vec<LayerStats>,
}

impl StatsBundle {
    /// A bundle with the same structure and bin edges and all counters zero.
    pub fn empty_like(other: &StatsBundle) -> Self {
        Self {
            bins: other.bins,
            with_gradients: other.with_gradients,
            images: 0,
            grad_images: 0,
            class_images: vec![0; other.class_images.len()],
            layers: other
                .layers
                .iter()
                .map(|l| {
                    LayerStats::empty(
                        l.layer_id,
                        l.filters(),
                        other.bins,
                        l.bin_range,
                        other.class_images.len(),
                    )
                })
                .collect(),
        }
    }

    pub fn layer(&self, layer_id: usize) -> Option<&LayerStats> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// `Mean_i` for each filter of `layer_id`.
    pub fn mean_activation(&self, layer_id: usize) -> Result<Vec<f64>> {
        let l = self.require(layer_id)?;
        if self.images == 0 {
            return Err(Error::MissingStats("no images accumulated".into()));
        }
        Ok(l.sum_activation
            .iter()
            .map(|s| s.value() / self.images as f64)
            .collect())
    }

    /// Fraction of exact zeros in each filter's feature maps.
    pub fn apoz(&self, layer_id: usize) -> Result<Vec<f64>> {
        let l = self.require(layer_id)?;
        l.zero_count
            .iter()
            .zip(&l.element_count)
            .map(|(&z, &n)| {
                if n == 0 {
                    Err(Error::MissingStats(format!("layer {layer_id}: no activations counted")))
                } else {
                    Ok(z as f64 / n as f64)
                }
            })
            .collect()
    }

    /// `p_ij = histogram[i][j] / images`.
    pub fn bin_probabilities(&self, layer_id: usize) -> Result<Vec<Vec<f64>>> {
        let l = self.require(layer_id)?;
        if self.images == 0 {
            return Err(Error::MissingStats("no images accumulated".into()));
        }
        Ok(l.histogram
            .iter()
            .map(|h| h.iter().map(|&c| c as f64 / self.images as f64).collect())
            .collect())
    }

    fn require(&self, layer_id: usize) -> Result<&LayerStats> {
        self.layer(layer_id)
            .ok_or_else(|| Error::MissingStats(format!("no statistics for layer {layer_id}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        ContainerWriter::new()
            .section(TAG_STATS, encode(self))
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::parse(bytes)?;
        Ok(decode(c.require(TAG_STATS)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Adds every counter of `b` to `a`. Both must share layers, filter counts,
/// bin count and bin edges.
pub fn merge_stats(a: &StatsBundle, b: &StatsBundle) -> Result<StatsBundle> {
    let mismatch = |what: &str| Err(Error::MissingStats(format!("cannot merge: {what} differ")));
    if a.bins != b.bins {
        return mismatch("bin counts");
    }
    if a.with_gradients != b.with_gradients {
        return mismatch("gradient settings");
    }
    if a.class_images.len() != b.class_images.len() || a.layers.len() != b.layers.len() {
        return mismatch("structures");
    }
    let mut out = a.clone();
    out.images += b.images;
    out.grad_images += b.grad_images;
    for (x, &y) in out.class_images.iter_mut().zip(&b.class_images) {
        *x += y;
    }
    for (la, lb) in out.layers.iter_mut().zip(&b.layers) {
        if la.layer_id != lb.layer_id || la.filters() != lb.filters() {
            return mismatch("layer structures");
        }
        if la.bin_range.0.to_bits() != lb.bin_range.0.to_bits()
            || la.bin_range.1.to_bits() != lb.bin_range.1.to_bits()
        {
            return mismatch("bin edges");
        }
        add_all(&mut la.sum_activation, &lb.sum_activation);
        add_all(&mut la.grad_l1_sum, &lb.grad_l1_sum);
        for (x, &y) in la.zero_count.iter_mut().zip(&lb.zero_count) {
            *x += y;
        }
        for (x, &y) in la.element_count.iter_mut().zip(&lb.element_count) {
            *x += y;
        }
        for (ha, hb) in la.histogram.iter_mut().zip(&lb.histogram) {
            for (x, &y) in ha.iter_mut().zip(hb) {
                *x += y;
            }
        }
        for (ca, cb) in la.class_grad_l1_sum.iter_mut().zip(&lb.class_grad_l1_sum) {
            add_all(ca, cb);
        }
    }
    Ok(out)
}

fn add_all(a: &mut [FixedSum], b: &[FixedSum]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x + y;
    }
}

/// Per-image spatial mean of every filter's feature map, `[image][filter]`,
/// plus exact-zero counts.
fn feature_means<S: Scalar>(activation: &Tensor<S>) -> (Vec<Vec<f64>>, Vec<Vec<u64>>, u64) {
    let s = activation.shape();
    let (n, c) = (s[0], s[1]);
    let plane: usize = s[2..].iter().product();
    let mut means = vec![vec![0.0; c]; n];
    let mut zeros = vec![vec![0u64; c]; n];
    for b in 0..n {
        let sample = activation.outer(b);
        for f in 0..c {
            let map = &sample[f * plane..(f + 1) * plane];
            let mut sum = 0.0f64;
            let mut z = 0u64;
            for &v in map {
                sum += v.as_f64();
                z += u64::from(v == S::zero());
            }
            means[b][f] = sum / plane as f64;
            zeros[b][f] = z;
        }
    }
    (means, zeros, plane as u64)
}

fn check_inputs<S: Scalar>(network: &NetworkGraph<S>, data: &Dataset) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot collect statistics over an empty dataset".into()));
    }
    if data.class_count() > network.class_count() {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, network {}",
            data.class_count(),
            network.class_count()
        )));
    }
    Ok(network.conv_layers())
}

/// First pass: histogram range `(0, max spatial mean)` for every conv layer.
pub fn activation_ranges<S: Scalar>(network: &NetworkGraph<S>, data: &Dataset) -> Result<Vec<(f64, f64)>> {
    let convs = check_inputs(network, data)?;
    let mut hi = vec![0.0f64; convs.len()];
    let end = network.logits_end();
    for start in (0..data.len()).step_by(BATCH) {
        let idx: Vec<usize> = (start..(start + BATCH).min(data.len())).collect();
        let (x, _) = data.batch::<S>(&idx);
        let trace = network.forward_trace(&x, end)?;
        for (k, &id) in convs.iter().enumerate() {
            let (means, _, _) = feature_means(&trace[network.activation_layer(id)]);
            for row in means {
                for m in row {
                    hi[k] = hi[k].max(m);
                }
            }
        }
    }
    Ok(hi.into_iter().map(|h| (0.0, h)).collect())
}

/// Both passes over `data`.
pub fn collect_stats<S: Scalar>(
    network: &NetworkGraph<S>,
    data: &Dataset,
    options: StatsOptions,
) -> Result<StatsBundle> {
    let ranges = activation_ranges(network, data)?;
    collect_stats_with_ranges(network, data, options, &ranges)
}

/// Second pass with fixed histogram ranges, so that shards collected
/// separately can be merged.
pub fn collect_stats_with_ranges<S: Scalar>(
    network: &NetworkGraph<S>,
    data: &Dataset,
    options: StatsOptions,
    ranges: &[(f64, f64)],
) -> Result<StatsBundle> {
    let convs = check_inputs(network, data)?;
    if options.bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if ranges.len() != convs.len() {
        return Err(Error::invalid(format!(
            "{} bin ranges for {} conv layers",
            ranges.len(),
            convs.len()
        )));
    }
    let classes = network.class_count();
    let mut bundle = StatsBundle {
        bins: options.bins,
        with_gradients: options.with_gradients,
        images: 0,
        grad_images: 0,
        class_images: vec![0; classes],
        layers: convs
            .iter()
            .zip(ranges)
            .map(|(&id, &range)| {
                let filters = network.layer(id).and_then(|l| l.out_channels()).unwrap_or(0);
                LayerStats::empty(id, filters, options.bins, range, classes)
            })
            .collect(),
    };

    let end = network.logits_end();
    // per-example backprop when gradients are requested; batched otherwise
    let step = if options.with_gradients { 1 } else { BATCH };
    for start in (0..data.len()).step_by(step) {
        let idx: Vec<usize> = (start..(start + step).min(data.len())).collect();
        let (x, labels) = data.batch::<S>(&idx);
        let (trace, grads) = if options.with_gradients {
            let (_, grads, trace) = network.gradients(&x, &labels)?;
            (trace, Some(grads))
        } else {
            (network.forward_trace(&x, end)?, None)
        };
        for (k, &id) in convs.iter().enumerate() {
            let act = &trace[network.activation_layer(id)];
            act.ensure_finite(&format!("activation of conv layer {id}"))?;
            let (means, zeros, plane) = feature_means(act);
            let ls = &mut bundle.layers[k];
            for (row, zrow) in means.iter().zip(&zeros) {
                for (f, (&m, &z)) in row.iter().zip(zrow).enumerate() {
                    ls.sum_activation[f].add(m);
                    ls.zero_count[f] += z;
                    ls.element_count[f] += plane;
                    let bin = ls.bin_of(m);
                    ls.histogram[f][bin] += 1;
                }
            }
            if let Some(grads) = &grads {
                let (gw, _) = grads[id].as_ref().expect("conv layer has gradients");
                let label = labels[0];
                for f in 0..ls.filters() {
                    let l1: f64 = gw.outer(f).iter().map(|g| g.as_f64().abs()).sum();
                    if !l1.is_finite() {
                        return Err(Error::NonFinite(format!("gradient of conv layer {id}")));
                    }
                    ls.grad_l1_sum[f].add(l1);
                    ls.class_grad_l1_sum[label][f].add(l1);
                }
            }
        }
        bundle.images += idx.len() as u64;
        if options.with_gradients {
            bundle.grad_images += 1;
            bundle.class_images[labels[0]] += 1;
        }
    }
    Ok(bundle)
}

fn put_fixed(out: &mut Vec<u8>, v: FixedSum) {
    out.extend_from_slice(&v.raw().to_le_bytes());
}

fn encode(b: &StatsBundle) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, b.bins as u32);
    out.push(u8::from(b.with_gradients));
    put_u64(&mut out, b.images);
    put_u64(&mut out, b.grad_images);
    put_u32(&mut out, b.class_images.len() as u32);
    for &c in &b.class_images {
        put_u64(&mut out, c);
    }
    put_u32(&mut out, b.layers.len() as u32);
    for l in &b.layers {
        put_u32(&mut out, l.layer_id as u32);
        put_u32(&mut out, l.filters() as u32);
        out.extend_from_slice(&l.bin_range.0.to_le_bytes());
        out.extend_from_slice(&l.bin_range.1.to_le_bytes());
        for f in 0..l.filters() {
            put_fixed(&mut out, l.sum_activation[f]);
            put_u64(&mut out, l.zero_count[f]);
            put_u64(&mut out, l.element_count[f]);
            put_fixed(&mut out, l.grad_l1_sum[f]);
            for &h in &l.histogram[f] {
                put_u64(&mut out, h);
            }
        }
        for class in &l.class_grad_l1_sum {
            for &v in class {
                put_fixed(&mut out, v);
            }
        }
    }
    out
}

fn decode(payload: &[u8]) -> Result<StatsBundle, CheckpointError> {
    let mut r = Reader::new(payload, "STAT");
    let bins = r.u32()? as usize;
    let with_gradients = r.u8()? != 0;
    let images = r.u64()?;
    let grad_images = r.u64()?;
    let n_classes = r.u32()? as usize;
    let class_images = (0..n_classes).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let layer_id = r.u32()? as usize;
        let filters = r.u32()? as usize;
        let range = (r.f64()?, r.f64()?);
        let mut l = LayerStats::empty(layer_id, filters, bins, range, n_classes);
        for f in 0..filters {
            l.sum_activation[f] = FixedSum(r.i128()?);
            l.zero_count[f] = r.u64()?;
            l.element_count[f] = r.u64()?;
            l.grad_l1_sum[f] = FixedSum(r.i128()?);
            for j in 0..bins {
                l.histogram[f][j] = r.u64()?;
            }
        }
        for c in 0..n_classes {
            for f in 0..filters {
                l.class_grad_l1_sum[c][f] = FixedSum(r.i128()?);
            }
        }
        layers.push(l);
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok(StatsBundle {
        bins,
        with_gradients,
        images,
        grad_images,
        class_images,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_model, ArchSpec};

    fn toy_data(n: usize) -> Dataset {
        Dataset::synthetic(5, 3, n, [1, 6, 6])
    }

    fn toy_net() -> NetworkGraph<f64> {
        build_model(&ArchSpec::vgg_tiny(&[3, 4], [1, 6, 6], 3), 2).unwrap()
    }

    #[test]
    fn fixed_sum_is_exactly_associative() {
        let vals = [0.1, 1e-3, 7.25, 3.3333, 1e-9];
        let mut fwd = FixedSum::default();
        vals.iter().for_each(|&v| fwd.add(v));
        let mut rev = FixedSum::default();
        vals.iter().rev().for_each(|&v| rev.add(v));
        assert_eq!(fwd, rev);
        assert!((fwd.value() - vals.iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn histogram_mass_and_zero_counts() {
        let data = toy_data(20);
        let s = collect_stats(&toy_net(), &data, StatsOptions::default()).unwrap();
        assert_eq!(s.images, 20);
        for l in &s.layers {
            for (f, h) in l.histogram.iter().enumerate() {
                assert_eq!(h.iter().sum::<u64>(), 20);
                assert!(l.zero_count[f] <= l.element_count[f]);
            }
        }
        for l in &s.layers {
            for p in s.bin_probabilities(l.layer_id).unwrap() {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for a in s.apoz(l.layer_id).unwrap() {
                assert!((0.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn single_image_fills_one_bin() {
        let data = toy_data(1);
        let s = collect_stats(&toy_net(), &data, StatsOptions::default()).unwrap();
        for l in &s.layers {
            for h in &l.histogram {
                assert_eq!(h.iter().filter(|&&c| c > 0).count(), 1);
                assert_eq!(h.iter().sum::<u64>(), 1);
            }
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = toy_data(4).select(&[]);
        assert!(collect_stats(&toy_net(), &data, StatsOptions::default()).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity_and_commutes() {
        let net = toy_net();
        let data = toy_data(12);
        let opts = StatsOptions {
            with_gradients: true,
            bins: 10,
        };
        let ranges = activation_ranges(&net, &data).unwrap();
        let a = collect_stats_with_ranges(&net, &data.select(&[0, 1, 2, 3, 4]), opts, &ranges).unwrap();
        let b = collect_stats_with_ranges(&net, &data.select(&[5, 6, 7, 8, 9, 10, 11]), opts, &ranges).unwrap();
        assert_eq!(merge_stats(&a, &StatsBundle::empty_like(&a)).unwrap(), a);
        assert_eq!(merge_stats(&a, &b).unwrap(), merge_stats(&b, &a).unwrap());
    }

    #[test]
    fn merge_rejects_different_edges() {
        let net = toy_net();
        let data = toy_data(6);
        let a = collect_stats(&net, &data.select(&[0, 1, 2]), StatsOptions::default()).unwrap();
        let b = collect_stats(&net, &data.select(&[3, 4, 5]), StatsOptions::default()).unwrap();
        if a.layers[0].bin_range != b.layers[0].bin_range {
            assert!(merge_stats(&a, &b).is_err());
        }
        let mut c = a.clone();
        c.bins = 5;
        assert!(merge_stats(&a, &c).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let net = toy_net();
        let data = toy_data(8);
        let s = collect_stats(
            &net,
            &data,
            StatsOptions {
                with_gradients: true,
                bins: 7,
            },
        )
        .unwrap();
        assert_eq!(StatsBundle::from_bytes(&s.to_bytes()).unwrap(), s);
    }
}
