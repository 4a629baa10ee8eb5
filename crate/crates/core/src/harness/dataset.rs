//! Labeled image datasets stored as `u8` pixels.
//!
//! A dataset file is a container with three sections:
//!
//! * `IMGS`: `N × C × H × W` bytes,
//! * `LABL`: `N` little-endian `u32` labels,
//! * `DMET`: name, shape, class names, class map, per-sample split tag and
//!   source index, and the per-channel normalisation computed on the train
//!   split.
//!
//! Images are normalised on the way into a batch as `(x - mean_c) / std_c`.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{
    put_string, put_u32, put_u64, Container, ContainerWriter, Reader, TAG_DATASET_META, TAG_IMAGES,
    TAG_LABELS,
};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        [Split::Train, Split::Valid, Split::Test].get(c as usize).copied()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    shape: [usize; 3],
    images: Vec<u8>,
    labels: Vec<usize>,
    splits: Vec<Split>,
    source_index: Vec<u64>,
    class_names: Vec<String>,
    /// Parent label of each class (identity for a root dataset).
    class_map: Vec<usize>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset and computes normalisation from its train samples
    /// (all samples if none are tagged train).
    pub fn new(
        name: impl Into<String>,
        shape: [usize; 3],
        images: Vec<u8>,
        labels: Vec<usize>,
        splits: Vec<Split>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        let mut ds = Self {
            name: name.into(),
            shape,
            images,
            labels,
            splits,
            source_index: (0..n as u64).collect(),
            class_map: (0..class_names.len()).collect(),
            class_names,
            mean: vec![0.0; shape[0]],
            std: vec![1.0; shape[0]],
        };
        ds.check()?;
        ds.normalise_from_train();
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        let n = self.labels.len();
        let per = self.sample_len();
        if per == 0 {
            return Err(Error::Dataset(format!("shape {:?} has a zero dimension", self.shape)));
        }
        if self.images.len() != n * per {
            return Err(Error::Dataset(format!(
                "images: {} bytes for {n} samples of shape {:?}",
                self.images.len(),
                self.shape
            )));
        }
        if self.splits.len() != n || self.source_index.len() != n {
            return Err(Error::Dataset(format!(
                "split tags/source indices: expected {n} entries"
            )));
        }
        if self.class_map.len() != self.class_names.len() {
            return Err(Error::Dataset("class_map and class_names differ in length".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Dataset(format!(
                "labels: {bad} out of range for {} classes",
                self.class_names.len()
            )));
        }
        if self.mean.len() != self.shape[0] || self.std.len() != self.shape[0] {
            return Err(Error::Dataset("normalisation: one mean/std per channel required".into()));
        }
        if self.std.iter().any(|&s| s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::Dataset("normalisation: std must be positive".into()));
        }
        Ok(())
    }

    fn normalise_from_train(&mut self) {
        let train: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == Split::Train).collect();
        let rows: Vec<usize> = if train.is_empty() { (0..self.len()).collect() } else { train };
        let c = self.shape[0];
        let plane = self.shape[1] * self.shape[2];
        for ch in 0..c {
            let (mut sum, mut sq, mut count) = (0.0f64, 0.0f64, 0.0f64);
            for &i in &rows {
                let start = i * self.sample_len() + ch * plane;
                for &v in &self.images[start..start + plane] {
                    let v = f64::from(v);
                    sum += v;
                    sq += v * v;
                    count += 1.0;
                }
            }
            if count > 0.0 {
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                self.mean[ch] = mean;
                self.std[ch] = if var > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn source_index(&self) -> &[u64] {
        &self.source_index
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_map(&self) -> &[usize] {
        &self.class_map
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn normalisation(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.std)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.sample_len();
        &self.images[i * per..(i + 1) * per]
    }

    fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Samples per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order. Normalisation and class
    /// metadata are carried over unchanged.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let per = self.sample_len();
        let mut images = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            name: self.name.clone(),
            shape: self.shape,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            source_index: indices.iter().map(|&i| self.source_index[i]).collect(),
            class_names: self.class_names.clone(),
            class_map: self.class_map.clone(),
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    /// Samples tagged with `split`.
    pub fn split(&self, split: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == split).collect();
        self.select(&idx)
    }

    /// A class-stratified random fraction: `ceil(fraction · count)` samples of
    /// every class, chosen with a ChaCha8 stream seeded by `seed`, returned
    /// in original order.
    pub fn stratified_fraction(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("data fraction {fraction} not in (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::new();
        for class in 0..self.class_count() {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            let take = (fraction * members.len() as f64).ceil() as usize;
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..take.min(members.len())]);
        }
        chosen.sort_unstable();
        if chosen.is_empty() {
            return Err(Error::Dataset(format!("data fraction {fraction} selects no samples")));
        }
        Ok(self.select(&chosen))
    }

    /// Normalised images and labels of `indices` as an `N × C × H × W` batch.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let [c, h, w] = self.shape;
        let plane = h * w;
        let mut data = Vec::with_capacity(indices.len() * c * plane);
        for &i in indices {
            let img = self.image(i);
            for ch in 0..c {
                let (m, s) = (self.mean[ch], self.std[ch]);
                data.extend(
                    img[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|&v| S::from_f64((f64::from(v) - m) / s)),
                );
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let x = Tensor::from_vec(&[indices.len(), c, h, w], data).expect("batch size matches shape");
        (x, labels)
    }

    /// A seeded synthetic dataset: each class has a random prototype image and
    /// samples are the prototype plus uniform noise. Labels cycle through the
    /// classes and every fifth sample of each class is tagged test.
    pub fn synthetic(seed: u64, classes: usize, n: usize, shape: [usize; 3]) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per: usize = shape.iter().product();
        let classes_n = classes.max(1);
        let prototypes: Vec<Vec<u8>> = (0..classes_n)
            .map(|_| (0..per).map(|_| rng.gen_range(0..=200u8)).collect())
            .collect();
        let mut images = Vec::with_capacity(n * per);
        let mut labels = Vec::with_capacity(n);
        let mut splits = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes_n;
            for &p in &prototypes[label] {
                images.push(p.saturating_add(rng.gen_range(0..=55u8)));
            }
            labels.push(label);
            splits.push(if (i / classes_n) % 5 == 4 { Split::Test } else { Split::Train });
        }
        let names = (0..classes_n).map(|c| format!("class{c}")).collect();
        Dataset::new(format!("synthetic-{seed}"), shape, images, labels, splits, names)
            .expect("synthetic dataset is consistent")
    }

    /// Reads the UCI optical digits table (64 comma-separated values in
    /// `0..=16` followed by the digit label per line, optionally
    /// gzip-compressed) into a `1 × 8 × 8` dataset. Each class is split
    /// train/test with a seeded shuffle, `test_fraction` of it to test.
    pub fn from_optdigits(path: &Path, test_fraction: f64, seed: u64) -> Result<Dataset> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = if raw.starts_with(&[0x1f, 0x8b]) {
            let mut s = String::new();
            flate2::read::GzDecoder::new(&raw[..])
                .read_to_string(&mut s)
                .map_err(|e| Error::io(path, e))?;
            s
        } else {
            String::from_utf8(raw).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != 65 {
                return Err(Error::Dataset(format!(
                    "{} row {row}: expected 65 fields, found {}",
                    path.display(),
                    record.len()
                )));
            }
            let parse = |s: &str| -> Result<u8> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| (0.0..=255.0).contains(v))
                    .map(|v| v as u8)
                    .ok_or_else(|| Error::Dataset(format!("{} row {row}: bad value {s:?}", path.display())))
            };
            for field in record.iter().take(64) {
                images.push(parse(field)?);
            }
            let label = parse(&record[64])? as usize;
            if label > 9 {
                return Err(Error::Dataset(format!("{} row {row}: label {label}", path.display())));
            }
            labels.push(label);
        }
        let splits = stratified_split(&labels, 10, test_fraction, seed)?;
        let names = (0..10).map(|d| d.to_string()).collect();
        Dataset::new("optdigits", [1, 8, 8], images, labels, splits, names)
    }

    /// The same dataset under another name.
    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub(crate) fn with_classes(mut self, class_names: Vec<String>, class_map: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        self.class_names = class_names;
        self.class_map = class_map;
        self.labels = labels;
        self.check()?;
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut labels = Vec::with_capacity(self.len() * 4);
        for &l in &self.labels {
            put_u32(&mut labels, l as u32);
        }
        let mut meta = Vec::new();
        put_string(&mut meta, &self.name);
        for d in self.shape {
            put_u32(&mut meta, d as u32);
        }
        put_u32(&mut meta, self.class_names.len() as u32);
        for (name, &parent) in self.class_names.iter().zip(&self.class_map) {
            put_string(&mut meta, name);
            put_u32(&mut meta, parent as u32);
        }
        put_u64(&mut meta, self.len() as u64);
        for (s, &src) in self.splits.iter().zip(&self.source_index) {
            meta.push(s.code());
            put_u64(&mut meta, src);
        }
        for (m, s) in self.mean.iter().zip(&self.std) {
            meta.extend_from_slice(&m.to_le_bytes());
            meta.extend_from_slice(&s.to_le_bytes());
        }
        ContainerWriter::new()
            .section(TAG_IMAGES, self.images.clone())
            .section(TAG_LABELS, labels)
            .section(TAG_DATASET_META, meta)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::parse(bytes)?;
        let images = c.require(TAG_IMAGES)?.to_vec();
        let mut r = Reader::new(c.require(TAG_LABELS)?, "LABL");
        let mut labels = Vec::with_capacity(r.remaining() / 4);
        while r.remaining() > 0 {
            labels.push(r.u32()? as usize);
        }
        let meta = decode_meta(c.require(TAG_DATASET_META)?, labels.len())?;
        let ds = Dataset {
            name: meta.name,
            shape: meta.shape,
            images,
            labels,
            splits: meta.splits,
            source_index: meta.source_index,
            class_names: meta.class_names,
            class_map: meta.class_map,
            mean: meta.mean,
            std: meta.std,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Loads a dataset file; `split` restricts it to one split.
pub fn load_dataset(path: &Path, split: Option<Split>) -> Result<Dataset> {
    let ds = Dataset::read(path)?;
    Ok(match split {
        Some(s) => ds.split(s),
        None => ds,
    })
}

struct Meta {
    name: String,
    shape: [usize; 3],
    class_names: Vec<String>,
    class_map: Vec<usize>,
    splits: Vec<Split>,
    source_index: Vec<u64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn decode_meta(payload: &[u8], n_labels: usize) -> Result<Meta, CheckpointError> {
    let mut r = Reader::new(payload, "DMET");
    let name = r.string()?;
    let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let classes = r.u32()? as usize;
    let mut class_names = Vec::new();
    let mut class_map = Vec::new();
    for _ in 0..classes {
        class_names.push(r.string()?);
        class_map.push(r.u32()? as usize);
    }
    let n = r.u64()? as usize;
    if n != n_labels {
        return Err(r.error(format!("{n} split tags for {n_labels} labels")));
    }
    let mut splits = Vec::with_capacity(n);
    let mut source_index = Vec::with_capacity(n);
    for _ in 0..n {
        let code = r.u8()?;
        splits.push(Split::from_code(code).ok_or_else(|| r.error(format!("split code {code}")))?);
        source_index.push(r.u64()?);
    }
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for _ in 0..shape[0] {
        mean.push(r.f64()?);
        std.push(r.f64()?);
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Meta {
        name,
        shape,
        class_names,
        class_map,
        splits,
        source_index,
        mean,
        std,
    })
}

/// Per-class seeded train/test assignment.
fn stratified_split(labels: &[usize], classes: usize, test_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Train; labels.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        for &i in &members[..n_test] {
            splits[i] = Split::Test;
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = Dataset::synthetic(7, 10, 1000, [1, 8, 8]);
        let b = Dataset::synthetic(7, 10, 1000, [1, 8, 8]);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), Dataset::synthetic(8, 10, 1000, [1, 8, 8]).to_bytes());
    }

    #[test]
    fn splits_are_disjoint() {
        let ds = Dataset::synthetic(1, 4, 50, [1, 4, 4]);
        let train = ds.split(Split::Train);
        let test = ds.split(Split::Test);
        assert_eq!(train.len() + test.len(), 50);
        for s in test.source_index() {
            assert!(!train.source_index().contains(s));
        }
    }

    #[test]
    fn train_split_normalises_to_zero_mean() {
        let ds = Dataset::synthetic(3, 5, 200, [2, 4, 4]);
        let train = ds.split(Split::Train);
        let idx: Vec<usize> = (0..train.len()).collect();
        let (x, _) = train.batch::<f64>(&idx);
        let plane = 16;
        for ch in 0..2 {
            let mut sum = 0.0;
            let mut count = 0.0;
            for b in 0..train.len() {
                let s = &x.outer(b)[ch * plane..(ch + 1) * plane];
                sum += s.iter().sum::<f64>();
                count += plane as f64;
            }
            assert!((sum / count).abs() < 1e-6);
        }
    }

    #[test]
    fn container_round_trip() {
        let ds = Dataset::synthetic(2, 3, 30, [1, 5, 5]);
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn stratified_fraction_takes_every_class() {
        let ds = Dataset::synthetic(4, 5, 100, [1, 4, 4]);
        let part = ds.stratified_fraction(0.1, 9).unwrap();
        assert_eq!(part.class_counts(), vec![2; 5]);
        assert_eq!(part, ds.stratified_fraction(0.1, 9).unwrap());
        assert!(ds.stratified_fraction(0.0, 9).is_err());
    }

    #[test]
    fn optdigits_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/optdigits.csv.gz");
        let ds = Dataset::from_optdigits(&path, 0.3, 0).unwrap();
        assert_eq!(ds.len(), 1797);
        assert_eq!(ds.class_count(), 10);
        let test = ds.split(Split::Test).len();
        assert!((500..580).contains(&test));
    }
}
