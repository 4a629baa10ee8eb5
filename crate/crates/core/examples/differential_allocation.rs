//! Split a global filter budget across layers so that wider layers lose a
//! larger share, then run a schedule with that allocation.
//!
//! ```text
//! cargo run --release --example differential_allocation
//! ```

use filterprune::criteria::allocate_differential;
use filterprune::harness::{report_csv, Dataset, Split};
use filterprune::netgraph::{ArchSpec, VGG16_WIDTHS};
use filterprune::pipeline::{run_prune_schedule, train_from_scratch, PruneConfig, TrainSettings};

fn main() -> filterprune::Result<()> {
    let sizes = &VGG16_WIDTHS[..11];
    let keep = allocate_differential(sizes, 1600)?;
    println!("VGG-16 first 11 layers, budget 1600");
    for (n, k) in sizes.iter().zip(&keep) {
        println!("  {n:>4} -> keep {k:>4} (pruned {:>5.1}%)", 100.0 * (n - k) as f64 / *n as f64);
    }

    let data = Dataset::synthetic(1, 5, 600, [1, 8, 8]);
    let (train, test) = (data.split(Split::Train), data.split(Split::Test));
    let spec = ArchSpec::vgg_tiny(&[8, 8, 16, 16], data.shape(), data.class_count());
    let net = train_from_scratch::<f32>(&spec, &train, 3, 0, TrainSettings::default())?;
    let config = PruneConfig {
        differential_budget: Some(18),
        ..Default::default()
    };
    let (_, report) = run_prune_schedule(&net, &config, &train, &test)?;
    print!("{}", report_csv(&report)?);
    Ok(())
}
