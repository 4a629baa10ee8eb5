//! Build a two-class benchmark out of a ten-class dataset, then prune with
//! the class-specific criterion so that filters important to those classes
//! survive. Accuracy is measured on the subset with only its classes' logits
//! competing.
//!
//! ```text
//! cargo run --release --example class_specific
//! ```

use filterprune::criteria::Criterion;
use filterprune::harness::{build_class_subset, evaluate_subset, ClassSubsetSpec, Dataset, Split};
use filterprune::netgraph::ArchSpec;
use filterprune::pipeline::{run_prune_schedule, train_from_scratch, PruneConfig, PrunePercent, TrainSettings};

fn main() -> filterprune::Result<()> {
    let data = Dataset::synthetic(4, 10, 1500, [1, 8, 8]);
    let spec = ArchSpec::vgg_tiny(&[8, 8, 16], data.shape(), data.class_count());
    let net = train_from_scratch::<f32>(&spec, &data.split(Split::Train), 3, 0, TrainSettings::default())?;

    let subset = build_class_subset(&data, &ClassSubsetSpec::new(data.name(), &[3, 8]))?;
    let test = subset.split(Split::Test);
    println!("{}: {} images, before pruning {:.4}", subset.name(), subset.len(), evaluate_subset(&net, &test)?);

    for criterion in [Criterion::ClassSpecific, Criterion::Random] {
        let config = PruneConfig {
            criterion,
            prune_percent: PrunePercent::Uniform(75),
            class_set: (criterion == Criterion::ClassSpecific).then(|| vec![3, 8]),
            finetune_epochs: 0,
            final_finetune_epochs: 0,
            ..Default::default()
        };
        // schedule accuracy uses all ten logits, so report the subset score separately
        let (pruned, _) = run_prune_schedule(&net, &config, &data.split(Split::Train), &data.split(Split::Test))?;
        println!("{criterion:<16} 75% pruned, no fine-tuning: subset accuracy {:.4}", evaluate_subset(&pruned, &test)?);
    }
    Ok(())
}
