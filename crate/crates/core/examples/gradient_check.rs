//! Compare backprop gradients with central finite differences for both model
//! families, in 64-bit precision.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use filterprune::netgraph::{build_model, ArchSpec};
use filterprune::tensor::{check_gradients_with, GradCheckOptions, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> filterprune::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let specs = [
        ArchSpec::vgg_tiny(&[4, 4, 8], [1, 8, 8], 10),
        ArchSpec::resnet_tiny(&[4, 3, 5, 2, 3], [3, 8, 8], 10),
    ];
    for spec in specs {
        let net = build_model::<f64>(&spec, 1)?;
        let [c, h, w] = spec.input_shape;
        let x = Tensor::from_vec(&[4, c, h, w], (0..4 * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let labels = [0, 3, 7, 9];
        for epsilon in [1e-4, 1e-6] {
            let opts = GradCheckOptions {
                epsilon,
                per_layer: 48,
                seed: 2,
            };
            let err = check_gradients_with(&net, &x, &labels, opts)?;
            println!("{:<12} eps {epsilon:.0e}: max relative error {err:.3e}", spec.family.name());
        }
    }
    Ok(())
}
