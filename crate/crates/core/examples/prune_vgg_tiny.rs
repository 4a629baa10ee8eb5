//! Train a small VGG-style network on the optical digits data, then prune
//! half of the filters of every conv layer but the first, one layer at a
//! time from the back, fine-tuning after each layer.
//!
//! ```text
//! cargo run --release --example prune_vgg_tiny -- [criterion]
//! ```

use std::path::Path;
use std::time::Instant;

use filterprune::criteria::Criterion;
use filterprune::harness::{evaluate, report_csv, Dataset, Split};
use filterprune::netgraph::{count_costs, ArchSpec};
use filterprune::pipeline::{run_prune_schedule, train_from_scratch, PruneConfig, PrunePercent, TrainSettings};

fn main() -> filterprune::Result<()> {
    let criterion: Criterion = std::env::args().nth(1).as_deref().unwrap_or("l1-norm").parse()?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/optdigits.csv.gz");
    let data = Dataset::from_optdigits(&path, 0.3, 0)?;
    let (train, test) = (data.split(Split::Train), data.split(Split::Test));

    let spec = ArchSpec::vgg_tiny(&[16, 16, 32, 32], data.shape(), data.class_count());
    let t = Instant::now();
    let net = train_from_scratch::<f32>(&spec, &train, 12, 1, TrainSettings::default())?;
    println!(
        "baseline: test accuracy {:.4}, {:?}, trained in {:.1}s",
        evaluate(&net, &test)?,
        count_costs(&net)?,
        t.elapsed().as_secs_f64()
    );

    let config = PruneConfig {
        criterion,
        prune_percent: PrunePercent::Uniform(50),
        finetune_epochs: 1,
        final_finetune_epochs: 4,
        class_set: None,
        ..PruneConfig::default()
    };
    let t = Instant::now();
    let (pruned, report) = run_prune_schedule(&net, &config, &train, &test)?;
    print!("{}", report_csv(&report)?);
    println!(
        "final accuracy {:.4} ({:?}) in {:.1}s",
        report.final_accuracy.unwrap_or(f32::NAN),
        count_costs(&pruned)?,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}
