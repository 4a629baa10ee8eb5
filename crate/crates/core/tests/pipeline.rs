//! Schedules, fine-tuning scopes and training on small synthetic problems.

use filterprune::criteria::Criterion;
use filterprune::harness::{Dataset, Split};
use filterprune::netgraph::{build_model, count_costs, layer_costs, residual_blocks, ArchSpec, NetworkGraph};
use filterprune::pipeline::{
    epochs_to_peak, fine_tune, prune_order, run_prune_schedule, train_from_scratch, trainable_layers,
    FineTuneOptions, PruneConfig, PrunePercent, RetrainScope, TrainSettings,
};
use filterprune::surgery::ResidualMode;

fn problem() -> (Dataset, Dataset) {
    let data = Dataset::synthetic(31, 4, 160, [1, 8, 8]);
    (data.split(Split::Train), data.split(Split::Test))
}

fn trained(spec: &ArchSpec, train: &Dataset) -> NetworkGraph<f32> {
    train_from_scratch(spec, train, 2, 7, TrainSettings::default()).unwrap()
}

fn changed_layers(a: &NetworkGraph<f32>, b: &NetworkGraph<f32>) -> Vec<usize> {
    a.param_layers()
        .into_iter()
        .filter(|&id| {
            let (la, lb) = (a.layer(id).unwrap(), b.layer(id).unwrap());
            let bits = |l: &filterprune::tensor::LayerParams<f32>| -> Vec<u32> {
                l.weights()
                    .unwrap()
                    .data()
                    .iter()
                    .chain(l.bias().unwrap().data())
                    .map(|v| v.to_bits())
                    .collect()
            };
            bits(la) != bits(lb)
        })
        .collect()
}

#[test]
fn scopes_update_exactly_their_layers() {
    let (train, _) = problem();
    let spec = ArchSpec::vgg_tiny(&[4, 4, 6], [1, 8, 8], 4);
    let net = build_model::<f32>(&spec, 3).unwrap();
    let convs = net.conv_layers();
    let dense = net.dense_layers();
    let cases = [
        (RetrainScope::All, vec![], net.param_layers()),
        (RetrainScope::FcOnly, vec![], dense.clone()),
        (RetrainScope::ConvOnly, vec![], convs.clone()),
        (RetrainScope::Neighbors, vec![convs[1]], convs.clone()),
        (RetrainScope::Neighbors, vec![convs[2]], vec![convs[1], convs[2], dense[0]]),
        (RetrainScope::Neighbors, vec![convs[0]], vec![convs[0], convs[1]]),
    ];
    for (scope, centers, expected) in cases {
        assert_eq!(trainable_layers(&net, scope, &centers).unwrap(), expected, "{scope:?}");
        let mut opts = FineTuneOptions::new(1, scope, 1, TrainSettings::default());
        opts.centers = centers;
        let tuned = fine_tune(&net, &train, &opts).unwrap();
        assert_eq!(changed_layers(&net, &tuned), expected, "{scope:?}");
    }
    assert!(trainable_layers(&net, RetrainScope::Neighbors, &[]).is_err());
}

#[test]
fn zero_epochs_leave_the_network_untouched() {
    let (train, _) = problem();
    let spec = ArchSpec::vgg_tiny(&[4, 6], [1, 8, 8], 4);
    let net = build_model::<f32>(&spec, 4).unwrap();
    let tuned = fine_tune(&net, &train, &FineTuneOptions::new(0, RetrainScope::All, 0, TrainSettings::default())).unwrap();
    assert!(tuned.params_bits_eq(&net));
    let scratch = train_from_scratch::<f32>(&spec, &train, 0, 4, TrainSettings::default()).unwrap();
    assert!(scratch.params_bits_eq(&net));
}

#[test]
fn half_width_conv_costs_are_a_quarter() {
    let spec = ArchSpec::vgg_tiny(&[8, 8, 16, 16], [1, 8, 8], 10);
    let full = build_model::<f32>(&spec, 0).unwrap();
    let half = build_model::<f32>(&spec.scaled(0.5), 0).unwrap();
    let (cf, ch) = (layer_costs(&full).unwrap(), layer_costs(&half).unwrap());
    let convs = full.conv_layers();
    // the first conv only halves: its input is the image
    assert_eq!(2 * ch[convs[0]].mult_adds, cf[convs[0]].mult_adds);
    for &id in &convs[1..] {
        assert_eq!(4 * ch[id].mult_adds, cf[id].mult_adds, "layer {id}");
    }
}

#[test]
fn schedules_are_reproducible() {
    let (train, test) = problem();
    let net = trained(&ArchSpec::vgg_tiny(&[6, 6, 8], [1, 8, 8], 4), &train);
    for criterion in [Criterion::Random, Criterion::ScaledEntropy, Criterion::Sensitivity] {
        let config = PruneConfig {
            criterion,
            seed: 3,
            data_fraction: 0.5,
            ..Default::default()
        };
        let (a, ra) = run_prune_schedule(&net, &config, &train, &test).unwrap();
        let (b, rb) = run_prune_schedule(&net, &config, &train, &test).unwrap();
        assert!(a.params_bits_eq(&b), "{criterion}");
        assert_eq!(ra.steps.len(), rb.steps.len());
        for (x, y) in ra.steps.iter().zip(&rb.steps) {
            assert_eq!((x.acc_damage, x.acc_recovery, x.kept), (y.acc_damage, y.acc_recovery, y.kept));
        }
    }
}

#[test]
fn differential_schedule_removes_the_budget() {
    let (train, test) = problem();
    let net = trained(&ArchSpec::vgg_tiny(&[4, 8, 8, 12], [1, 8, 8], 4), &train);
    let config = PruneConfig {
        differential_budget: Some(10),
        finetune_epochs: 0,
        final_finetune_epochs: 0,
        ..Default::default()
    };
    let before: usize = net.conv_layers().iter().map(|&id| net.layer(id).unwrap().out_channels().unwrap()).sum();
    let (pruned, report) = run_prune_schedule(&net, &config, &train, &test).unwrap();
    let after: usize = pruned.conv_layers().iter().map(|&id| pruned.layer(id).unwrap().out_channels().unwrap()).sum();
    assert_eq!(before - after, 10);
    assert_eq!(report.final_costs, Some(count_costs(&pruned).unwrap()));
    // larger layers lose a larger share
    let kept: Vec<usize> = report.steps.iter().map(|s| s.kept).collect();
    assert_eq!(report.steps.iter().map(|s| s.layer_id).collect::<Vec<_>>(), prune_order(&net, &config));
    assert!(kept[0] as f64 / 12.0 <= kept[2] as f64 / 8.0);
}

#[test]
fn per_layer_percentages_need_one_entry_per_conv_layer() {
    let (train, test) = problem();
    let net = build_model::<f32>(&ArchSpec::vgg_tiny(&[4, 4, 4], [1, 8, 8], 4), 0).unwrap();
    let bad = PruneConfig {
        prune_percent: PrunePercent::PerLayer(vec![50]),
        ..Default::default()
    };
    assert!(run_prune_schedule(&net, &bad, &train, &test).is_err());
    let good = PruneConfig {
        // the first conv is skipped, so its entry is unused
        prune_percent: PrunePercent::PerLayer(vec![0, 25, 75]),
        finetune_epochs: 0,
        final_finetune_epochs: 0,
        ..Default::default()
    };
    let (_, report) = run_prune_schedule(&net, &good, &train, &test).unwrap();
    // last layer first: 75% of 4 leaves 1, then 25% leaves 3
    assert_eq!(report.steps.iter().map(|s| s.kept).collect::<Vec<_>>(), vec![1, 3]);
}

#[test]
fn residual_schedules_leave_the_skip_widths_alone() {
    let (train, test) = problem();
    let spec = ArchSpec::resnet_tiny(&[6, 6, 6, 6, 6], [1, 8, 8], 4);
    let net = trained(&spec, &train);
    let blocks = residual_blocks(&net);
    for mode in [ResidualMode::FirstOnly, ResidualMode::FirstTwo] {
        let config = PruneConfig {
            residual_mode: mode,
            finetune_epochs: 0,
            final_finetune_epochs: 1,
            ..Default::default()
        };
        let order = prune_order(&net, &config);
        assert_eq!(order.len(), blocks.len() * mode.depth());
        let (pruned, report) = run_prune_schedule(&net, &config, &train, &test).unwrap();
        assert!(report.is_complete());
        for b in &blocks {
            let width = |id: usize| pruned.layer(id).unwrap().out_channels().unwrap();
            assert_eq!(width(b[0]), 3);
            assert_eq!(width(b[1]), if mode == ResidualMode::FirstTwo { 3 } else { 6 });
            assert_eq!(width(b[2]), 6);
        }
    }
    let explicit_third = PruneConfig {
        skip_layers: Some(vec![]),
        ..Default::default()
    };
    assert!(!prune_order(&net, &explicit_third).contains(&blocks[0][2]));
}

#[test]
fn peak_epoch_uses_a_small_tolerance() {
    assert_eq!(epochs_to_peak(&[0.5, 0.9, 0.91, 0.912]), 2);
    assert_eq!(epochs_to_peak(&[0.9, 0.8, 0.85]), 0);
    assert_eq!(epochs_to_peak(&[0.5, 0.9, 0.9024]), 1);
    assert_eq!(epochs_to_peak(&[0.7]), 0);
}
