//! Dense tensors, layer forward/backward rules, SGD and gradient checking.

mod dense;
mod gradcheck;
mod layer;
mod optim;
mod scalar;

pub use dense::Tensor;
pub use gradcheck::{check_gradients, check_gradients_with, GradCheckOptions};
pub use layer::{softmax_xent, LayerGrads, LayerKind, LayerParams};
pub use optim::Sgd;
pub use scalar::Scalar;
