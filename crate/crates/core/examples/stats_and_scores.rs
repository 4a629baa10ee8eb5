//! Collect activation and gradient statistics for a trained network and
//! print every criterion's scores for one layer, with the filters each would
//! keep at 50%.
//!
//! ```text
//! cargo run --release --example stats_and_scores
//! ```

use filterprune::criteria::{keep_count_for, score_filters, select_top_m, Criterion, ScoreInputs};
use filterprune::harness::{Dataset, Split};
use filterprune::netgraph::ArchSpec;
use filterprune::pipeline::{train_from_scratch, TrainSettings};
use filterprune::stats::{collect_stats, StatsOptions};

fn main() -> filterprune::Result<()> {
    let data = Dataset::synthetic(0, 4, 800, [1, 8, 8]);
    let train = data.split(Split::Train);
    let spec = ArchSpec::vgg_tiny(&[8, 8], data.shape(), data.class_count());
    let net = train_from_scratch::<f32>(&spec, &train, 3, 0, TrainSettings::default())?;

    let stats = collect_stats(
        &net,
        &train,
        StatsOptions {
            with_gradients: true,
            ..Default::default()
        },
    )?;
    let layer = net.conv_layers()[1];
    println!("layer {layer}, {} images", stats.images);
    println!("mean activation {:.3?}", stats.mean_activation(layer)?);
    println!("APoZ            {:.3?}", stats.apoz(layer)?);

    let params = net.layer(layer).expect("conv layer");
    let keep = keep_count_for(8, 50)?;
    for criterion in Criterion::ALL {
        let inputs = ScoreInputs {
            stats: Some(&stats),
            class_set: (criterion == Criterion::ClassSpecific).then_some(&[0, 1][..]),
            seed: (criterion == Criterion::Random).then_some(7),
        };
        let scores = score_filters(criterion, layer, params, inputs)?;
        println!(
            "{:<16} keep {:?} scores {:.3?}",
            criterion.name(),
            select_top_m(&scores, keep)?,
            scores.scores
        );
    }
    Ok(())
}
