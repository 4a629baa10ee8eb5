//! Which layers should fine-tuning update after a layer is pruned? Runs the
//! same schedule with each retraining scope and prints damage, recovery and
//! final accuracy.
//!
//! ```text
//! cargo run --release --example retrain_scope
//! ```

use std::path::Path;

use filterprune::harness::{Dataset, Split};
use filterprune::netgraph::ArchSpec;
use filterprune::pipeline::{run_prune_schedule, train_from_scratch, PruneConfig, RetrainScope, TrainSettings};

fn main() -> filterprune::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/optdigits.csv.gz");
    let data = Dataset::from_optdigits(&path, 0.3, 0)?;
    let (train, test) = (data.split(Split::Train), data.split(Split::Test));
    let spec = ArchSpec::vgg_tiny(&[16, 16, 32, 32], data.shape(), data.class_count());
    let net = train_from_scratch::<f32>(&spec, &train, 12, 1, TrainSettings::default())?;

    for scope in [RetrainScope::All, RetrainScope::ConvOnly, RetrainScope::Neighbors, RetrainScope::FcOnly] {
        let config = PruneConfig {
            retrain_scope: scope,
            ..Default::default()
        };
        let (_, report) = run_prune_schedule(&net, &config, &train, &test)?;
        let steps: Vec<String> = report
            .steps
            .iter()
            .map(|s| format!("{}: {:.3}->{:.3}", s.layer_id, s.acc_damage, s.acc_recovery))
            .collect();
        println!(
            "{:<10} {}  final {:.4}",
            scope.name(),
            steps.join("  "),
            report.final_accuracy.unwrap_or(f32::NAN)
        );
    }
    Ok(())
}
