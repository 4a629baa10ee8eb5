//! Class-subset benchmarks carved out of a parent dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Dataset;

/// The `l` classes of a parent dataset that form a subset benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSubsetSpec {
    /// Name of the parent dataset.
    pub parent: String,
    pub classes: Vec<usize>,
}

impl ClassSubsetSpec {
    pub fn new(parent: impl Into<String>, classes: &[usize]) -> Self {
        Self {
            parent: parent.into(),
            classes: classes.to_vec(),
        }
    }

    /// `<parent>-<l>c-<id>-<id>-…`
    pub fn derived_name(&self) -> String {
        let ids: Vec<String> = self.classes.iter().map(usize::to_string).collect();
        format!("{}-{}c-{}", self.parent, self.classes.len(), ids.join("-"))
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("class subset is empty"));
        }
        for (i, &c) in self.classes.iter().enumerate() {
            if c >= class_count {
                return Err(Error::invalid(format!("class {c} out of range for {class_count} classes")));
            }
            if self.classes[..i].contains(&c) {
                return Err(Error::invalid(format!("class {c} listed twice")));
            }
        }
        Ok(())
    }
}

/// Keeps the samples of `spec.classes` (every split) and relabels them
/// `0..l` in the order the classes are listed. The new class map points
/// at the parent's original labels.
pub fn build_class_subset(dataset: &Dataset, spec: &ClassSubsetSpec) -> Result<Dataset> {
    if spec.parent != dataset.name() {
        return Err(Error::Dataset(format!(
            "subset targets {:?} but dataset is {:?}",
            spec.parent,
            dataset.name()
        )));
    }
    spec.validate(dataset.class_count())?;
    let position = |label: usize| spec.classes.iter().position(|&c| c == label);
    let indices: Vec<usize> = (0..dataset.len())
        .filter(|&i| position(dataset.labels()[i]).is_some())
        .collect();
    if indices.is_empty() {
        return Err(Error::Dataset(format!("subset {} has no samples", spec.derived_name())));
    }
    let mut subset = dataset.select(&indices);
    let labels = subset
        .labels()
        .iter()
        .map(|&l| position(l).expect("filtered"))
        .collect();
    let names = spec
        .classes
        .iter()
        .map(|&c| dataset.class_names()[c].clone())
        .collect();
    let map = spec.classes.iter().map(|&c| dataset.class_map()[c]).collect();
    subset = subset.with_classes(names, map, labels)?;
    Ok(subset.renamed(spec.derived_name()))
}
