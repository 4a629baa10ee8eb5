//! Two ways to halve a layer: drop half of the filters, or merge consecutive
//! pairs into their mean. Compares the damage before any fine-tuning.
//!
//! ```text
//! cargo run --release --example averaging_vs_dropping
//! ```

use filterprune::criteria::{score_filters, select_top_m, Criterion, ScoreInputs};
use filterprune::harness::{evaluate, Dataset, Split};
use filterprune::netgraph::ArchSpec;
use filterprune::pipeline::{train_from_scratch, TrainSettings};
use filterprune::surgery::{average_consecutive, prune_layer};

fn main() -> filterprune::Result<()> {
    let data = Dataset::synthetic(3, 5, 800, [1, 8, 8]);
    let (train, test) = (data.split(Split::Train), data.split(Split::Test));
    let spec = ArchSpec::vgg_tiny(&[8, 8, 16], data.shape(), data.class_count());
    let net = train_from_scratch::<f32>(&spec, &train, 4, 0, TrainSettings::default())?;
    println!("baseline {:.4}", evaluate(&net, &test)?);

    for layer in net.conv_layers() {
        let n = net.layer(layer).and_then(|l| l.out_channels()).expect("conv layer");
        let l1 = score_filters(Criterion::L1Norm, layer, net.layer(layer).expect("conv layer"), ScoreInputs::default())?;
        let dropped = prune_layer(&net, layer, &select_top_m(&l1, n / 2)?)?;
        let first_half: Vec<usize> = (0..n / 2).collect();
        let naive = prune_layer(&net, layer, &first_half)?;
        let averaged = average_consecutive(&net, layer)?;
        println!(
            "layer {layer}: keep top-l1 {:.4}, keep first half {:.4}, average pairs {:.4}",
            evaluate(&dropped, &test)?,
            evaluate(&naive, &test)?,
            evaluate(&averaged, &test)?
        );
    }
    Ok(())
}
