//! Does pruning beat training the smaller architecture directly? Prunes every
//! conv layer of a trained network to half width and trains a half-width
//! network from scratch for the same total number of epochs.
//!
//! ```text
//! cargo run --release --example scratch_vs_pruned
//! ```

use std::path::Path;

use filterprune::harness::{evaluate, Dataset, Split};
use filterprune::netgraph::{count_costs, ArchSpec};
use filterprune::pipeline::{run_prune_schedule, train_from_scratch, PruneConfig, TrainSettings};

fn main() -> filterprune::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/optdigits.csv.gz");
    let data = Dataset::from_optdigits(&path, 0.3, 0)?;
    let (train, test) = (data.split(Split::Train), data.split(Split::Test));
    let spec = ArchSpec::vgg_tiny(&[16, 16, 32, 32], data.shape(), data.class_count());
    let base_epochs = 12;
    let net = train_from_scratch::<f32>(&spec, &train, base_epochs, 1, TrainSettings::default())?;

    let config = PruneConfig {
        skip_layers: Some(Vec::new()),
        ..Default::default()
    };
    let (pruned, report) = run_prune_schedule(&net, &config, &train, &test)?;
    let budget = base_epochs + report.steps.len() * config.finetune_epochs + config.final_finetune_epochs;
    println!(
        "pruned:  {:.4} ({:?})",
        report.final_accuracy.unwrap_or(f32::NAN),
        count_costs(&pruned)?
    );

    let small = train_from_scratch::<f32>(&spec.scaled(0.5), &train, budget, 1, TrainSettings::default())?;
    println!("scratch: {:.4} ({:?}), {budget} epochs", evaluate(&small, &test)?, count_costs(&small)?);
    Ok(())
}
