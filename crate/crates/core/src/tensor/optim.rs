use crate::error::{Error, Result};

use super::{LayerParams, Scalar};

/// SGD with classical momentum: `v ← momentum·v + grad`, `w ← w − lr·v`.
///
/// Velocity buffers are keyed by layer index and persist across steps. They
/// are dropped when a layer's parameter count changes (after surgery).
#[derive(Debug, Clone)]
pub struct Sgd<S> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<(Vec<S>, Vec<S>)>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Updates one layer from the gradients stored in its weight and bias
    /// tensors. Layers without weights are ignored. A non-finite gradient
    /// aborts the step before any parameter is touched.
    pub fn step_layer(&mut self, index: usize, layer: &mut LayerParams<S>) -> Result<()> {
        let Some((weights, bias)) = layer.params_mut() else {
            return Ok(());
        };
        let (Some(gw), Some(gb)) = (weights.grad(), bias.grad()) else {
            return Err(Error::invalid(format!("layer {index} has no gradients populated")));
        };
        if !gw.iter().chain(gb).all(|g| g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {index}")));
        }
        if self.velocity.len() <= index {
            self.velocity.resize(index + 1, None);
        }
        let slot = &mut self.velocity[index];
        if slot
            .as_ref()
            .is_none_or(|(vw, vb)| vw.len() != gw.len() || vb.len() != gb.len())
        {
            *slot = Some((vec![S::zero(); gw.len()], vec![S::zero(); gb.len()]));
        }
        let (vw, vb) = slot.as_mut().expect("velocity initialised");
        let lr = S::from_f64(self.lr);
        let mu = S::from_f64(self.momentum);
        let gw = gw.to_vec();
        let gb = gb.to_vec();
        update(weights.data_mut(), &gw, vw, lr, mu);
        update(bias.data_mut(), &gb, vb, lr, mu);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}

fn update<S: Scalar>(params: &mut [S], grad: &[S], velocity: &mut [S], lr: S, momentum: S) {
    for ((w, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}
