//! Prune a residual network. Only the first (or first two) conv layers of a
//! block can shrink: the third one's width is tied to the skip connection.
//!
//! ```text
//! cargo run --release --example residual_pruning
//! ```

use filterprune::harness::{evaluate, Dataset, Split};
use filterprune::netgraph::{count_costs, residual_blocks, ArchSpec};
use filterprune::pipeline::{prune_order, run_prune_schedule, train_from_scratch, PruneConfig, TrainSettings};
use filterprune::surgery::{prune_layer, ResidualMode};

fn main() -> filterprune::Result<()> {
    let data = Dataset::synthetic(2, 4, 600, [1, 8, 8]);
    let (train, test) = (data.split(Split::Train), data.split(Split::Test));
    let spec = ArchSpec::resnet_tiny(&[8, 8, 8, 8, 8], data.shape(), data.class_count());
    let net = train_from_scratch::<f32>(&spec, &train, 3, 0, TrainSettings::default())?;
    println!("blocks {:?}; baseline {:.4}", residual_blocks(&net), evaluate(&net, &test)?);

    let third = residual_blocks(&net)[0][2];
    match prune_layer(&net, third, &[0, 1, 2, 3]) {
        Err(e) => println!("pruning layer {third} directly: {e}"),
        Ok(_) => unreachable!("the skip-tied layer cannot be pruned"),
    }

    for mode in [ResidualMode::FirstOnly, ResidualMode::FirstTwo] {
        let config = PruneConfig {
            residual_mode: mode,
            ..Default::default()
        };
        let (pruned, report) = run_prune_schedule(&net, &config, &train, &test)?;
        println!(
            "{mode}: pruned layers {:?}, final {:.4}, {:?}",
            prune_order(&net, &config),
            report.final_accuracy.unwrap_or(f32::NAN),
            count_costs(&pruned)?
        );
    }
    Ok(())
}
