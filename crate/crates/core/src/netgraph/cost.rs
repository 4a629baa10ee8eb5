use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{LayerParams, Scalar};

use super::NetworkGraph;

/// Parameter and multiply-add counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    pub params: u64,
    pub mult_adds: u64,
}

impl std::ops::Add for Costs {
    type Output = Costs;
    fn add(self, rhs: Costs) -> Costs {
        Costs {
            params: self.params + rhs.params,
            mult_adds: self.mult_adds + rhs.mult_adds,
        }
    }
}

impl std::iter::Sum for Costs {
    fn sum<I: Iterator<Item = Costs>>(iter: I) -> Costs {
        iter.fold(Costs::default(), |a, b| a + b)
    }
}

/// Per-layer costs, indexed like `network.layers()`.
///
/// Conv: `n_k · i_k · kh · kw · H_out · W_out` multiply-adds; dense:
/// `in · out`. Params count weights plus biases.
pub fn layer_costs<S: Scalar>(network: &NetworkGraph<S>) -> Result<Vec<Costs>> {
    let shapes = network.layer_shapes()?;
    Ok(network
        .layers()
        .iter()
        .zip(&shapes)
        .map(|(layer, out)| {
            let params = layer.param_count() as u64;
            let mult_adds = match layer {
                LayerParams::Conv2d { weights, .. } => {
                    let per_pixel: usize = weights.shape().iter().product();
                    (per_pixel * out[1] * out[2]) as u64
                }
                LayerParams::Dense { weights, .. } => weights.len() as u64,
                _ => 0,
            };
            Costs { params, mult_adds }
        })
        .collect())
}

pub fn count_costs<S: Scalar>(network: &NetworkGraph<S>) -> Result<Costs> {
    Ok(layer_costs(network)?.into_iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{build_model, ArchSpec};
    use crate::tensor::Tensor;

    #[test]
    fn single_conv_hand_arithmetic() {
        let conv = LayerParams::<f32>::conv(Tensor::zeros(&[8, 1, 3, 3]), Tensor::zeros(&[8])).unwrap();
        let net = NetworkGraph::new([1, 8, 8], vec![conv], vec![], 8 * 64).unwrap();
        let c = count_costs(&net).unwrap();
        assert_eq!(c.params, 80);
        assert_eq!(c.mult_adds, 4608);
    }

    #[test]
    fn empty_graph_costs_nothing() {
        let net = NetworkGraph::<f32>::empty([1, 8, 8]);
        assert_eq!(count_costs(&net).unwrap(), Costs::default());
    }

    #[test]
    fn total_is_sum_of_layers() {
        let spec = ArchSpec::vgg_tiny(&[8, 8, 16, 16], [1, 8, 8], 10);
        let net = build_model::<f32>(&spec, 0).unwrap();
        let per = layer_costs(&net).unwrap();
        let total = count_costs(&net).unwrap();
        assert_eq!(per.iter().map(|c| c.params).sum::<u64>(), total.params);
        assert_eq!(total.params as usize, net.param_count());
    }
}
