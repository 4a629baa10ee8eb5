//! Build networks from architecture descriptions, count parameters and
//! multiply-adds per layer, and round-trip a checkpoint.
//!
//! ```text
//! cargo run --release --example build_and_cost
//! ```

use filterprune::netgraph::{build_model, count_costs, layer_costs, load_checkpoint, save_checkpoint, ArchSpec};

fn main() -> filterprune::Result<()> {
    let full = ArchSpec::vgg_tiny(&[16, 16, 32, 32], [1, 8, 8], 10);
    for spec in [full.clone(), full.scaled(0.5), ArchSpec::resnet_tiny(&[8, 8, 8, 16, 8], [1, 8, 8], 10)] {
        let net = build_model::<f32>(&spec, 0)?;
        println!("{} {:?}", spec.family, spec.filters_per_layer);
        for ((id, layer), cost) in net.layers().iter().enumerate().zip(layer_costs(&net)?) {
            if layer.kind().has_weights() {
                println!("  {id:>2} {:<7} {:>7} params {:>8} mult-adds", layer.kind().name(), cost.params, cost.mult_adds);
            }
        }
        let total = count_costs(&net)?;
        println!("  total   {:>7} params {:>8} mult-adds", total.params, total.mult_adds);

        let bytes = save_checkpoint(&net);
        let back = load_checkpoint::<f32>(&bytes)?;
        println!("  checkpoint {} bytes, round trip exact: {}", bytes.len(), back.params_bits_eq(&net));
    }
    Ok(())
}
