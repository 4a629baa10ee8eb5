//! Top-1 accuracy.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::netgraph::NetworkGraph;
use crate::tensor::{Scalar, Tensor};

use super::Dataset;

const EVAL_BATCH: usize = 128;

/// Index of the largest value; ties go to the lower index.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn evaluate<S: Scalar>(network: &NetworkGraph<S>, data: &Dataset) -> Result<f64> {
    if network.class_count() != data.class_count() {
        return Err(Error::Shape {
            layer: "class head".into(),
            expected: vec![data.class_count()],
            actual: vec![network.class_count()],
        });
    }
    let all: Vec<usize> = (0..network.class_count()).collect();
    accuracy_over(network, data, &all)
}

/// Accuracy of a network on a class-subset dataset: only the logits of the
/// parent classes in `data.class_map()` compete, and the winner is mapped
/// back to the subset label.
pub fn evaluate_subset<S: Scalar>(network: &NetworkGraph<S>, data: &Dataset) -> Result<f64> {
    if let Some(&bad) = data.class_map().iter().find(|&&c| c >= network.class_count()) {
        return Err(Error::Dataset(format!(
            "subset refers to parent class {bad}, network has {} classes",
            network.class_count()
        )));
    }
    accuracy_over(network, data, data.class_map())
}

fn accuracy_over<S: Scalar>(network: &NetworkGraph<S>, data: &Dataset, columns: &[usize]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    if data.shape() != network.input_shape() {
        return Err(Error::Shape {
            layer: "network input".into(),
            expected: network.input_shape().to_vec(),
            actual: data.shape().to_vec(),
        });
    }
    let starts: Vec<usize> = (0..data.len()).step_by(EVAL_BATCH).collect();
    let counts: Vec<Result<usize>> = starts
        .par_iter()
        .map(|&start| {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
            let (x, labels): (Tensor<S>, _) = data.batch(&idx);
            let logits = network.logits(&x)?;
            let mut picked = vec![S::zero(); columns.len()];
            Ok(labels
                .iter()
                .enumerate()
                .filter(|&(b, &label)| {
                    let row = logits.outer(b);
                    for (p, &c) in picked.iter_mut().zip(columns) {
                        *p = row[c];
                    }
                    argmax(&picked) == label
                })
                .count())
        })
        .collect();
    let mut correct = 0;
    for c in counts {
        correct += c?;
    }
    Ok(correct as f64 / data.len() as f64)
}
