use std::time::Instant;

use crate::criteria::{allocate_differential, keep_count_for, score_filters, select_top_m, ScoreInputs};
use crate::error::{Error, Result};
use crate::harness::{evaluate, Dataset};
use crate::netgraph::{count_costs, residual_blocks, NetworkGraph};
use crate::stats::{collect_stats, StatsOptions};
use crate::surgery::prune_layer;
use crate::tensor::Scalar;

use super::train::{epochs_to_peak, fine_tune_tracked, FineTuneOptions};
use super::{PruneConfig, PrunePercent, RetrainScope, RunReport, StepRecord};

/// The conv layers a schedule prunes, last first.
///
/// Plain networks: every conv layer not in `skip_layers` (default: the first
/// conv). Residual networks: the first (or first two) layers of each block,
/// minus `skip_layers`.
pub fn prune_order<S: Scalar>(network: &NetworkGraph<S>, config: &PruneConfig) -> Vec<usize> {
    let convs = network.conv_layers();
    let candidates: Vec<usize> = if network.residual_links().is_empty() {
        convs.clone()
    } else {
        let depth = config.residual_mode.depth();
        let mut ids: Vec<usize> = residual_blocks(network)
            .iter()
            .flat_map(|b| b[..depth].to_vec())
            .collect();
        ids.sort_unstable();
        ids
    };
    let skip: Vec<usize> = match &config.skip_layers {
        Some(s) => s.clone(),
        None if network.residual_links().is_empty() => convs.first().copied().into_iter().collect(),
        None => Vec::new(),
    };
    candidates.into_iter().rev().filter(|id| !skip.contains(id)).collect()
}

/// Keep count of every layer in `order`.
fn keep_counts<S: Scalar>(network: &NetworkGraph<S>, config: &PruneConfig, order: &[usize]) -> Result<Vec<usize>> {
    let width = |id: usize| network.layer(id).and_then(|l| l.out_channels()).unwrap_or(0);
    if let Some(budget) = config.differential_budget {
        let sizes: Vec<usize> = order.iter().map(|&id| width(id)).collect();
        return allocate_differential(&sizes, budget);
    }
    let convs = network.conv_layers();
    order
        .iter()
        .map(|&id| {
            let m = match &config.prune_percent {
                PrunePercent::Uniform(m) => *m,
                PrunePercent::PerLayer(ms) => {
                    if ms.len() != convs.len() {
                        return Err(Error::Config(format!(
                            "prune_percent lists {} values for {} conv layers",
                            ms.len(),
                            convs.len()
                        )));
                    }
                    ms[convs.iter().position(|&c| c == id).expect("order holds conv ids")]
                }
            };
            keep_count_for(width(id), m)
        })
        .collect()
}

/// Prunes `network` one conv layer at a time from the last to the first,
/// fine-tuning after each layer and once more at the end.
pub fn run_prune_schedule<S: Scalar>(
    network: &NetworkGraph<S>,
    config: &PruneConfig,
    train: &Dataset,
    eval: &Dataset,
) -> Result<(NetworkGraph<S>, RunReport)> {
    let mut report = RunReport::new(config.clone(), 0.0, Default::default());
    let net = run_prune_schedule_into(network, config, train, eval, &mut report)?;
    Ok((net, report))
}

/// Like [`run_prune_schedule`] but fills `report` as it goes, so a failed
/// run leaves the completed steps behind.
pub fn run_prune_schedule_into<S: Scalar>(
    network: &NetworkGraph<S>,
    config: &PruneConfig,
    train: &Dataset,
    eval: &Dataset,
    report: &mut RunReport,
) -> Result<NetworkGraph<S>> {
    let started = Instant::now();
    config.validate()?;
    let order = prune_order(network, config);
    let keeps = keep_counts(network, config, &order)?;
    let data = train.stratified_fraction(config.data_fraction, config.seed)?;
    let settings = config.train_settings();

    let baseline = evaluate(network, eval)?;
    *report = RunReport::new(config.clone(), baseline as f32, count_costs(network)?);
    let mut net = network.clone();
    let mut pruned_layers = Vec::new();

    for (step, (&layer_id, &keep)) in order.iter().zip(&keeps).enumerate() {
        let step_start = Instant::now();
        let n = net.layer(layer_id).and_then(|l| l.out_channels()).unwrap_or(0);
        let (acc_damage, acc_recovery, peak) = if keep >= n {
            let acc = evaluate(&net, eval)?;
            (acc, acc, 0)
        } else {
            let stats = if config.criterion.needs_stats() {
                let options = StatsOptions {
                    with_gradients: config.criterion.needs_gradients(),
                    bins: config.bins,
                };
                Some(collect_stats(&net, &data, options)?)
            } else {
                None
            };
            let inputs = ScoreInputs {
                stats: stats.as_ref(),
                class_set: config.class_set.as_deref(),
                seed: (config.criterion == crate::criteria::Criterion::Random).then_some(config.seed),
            };
            let scores = score_filters(config.criterion, layer_id, net.layer(layer_id).unwrap(), inputs)?;
            let kept = select_top_m(&scores, keep)?;
            net = prune_layer(&net, layer_id, &kept)?;
            pruned_layers.push(layer_id);
            let damage = evaluate(&net, eval)?;
            let options = FineTuneOptions {
                epochs: config.finetune_epochs,
                scope: config.retrain_scope,
                fraction: 1.0,
                seed: config.seed.wrapping_add(step as u64 + 1),
                settings,
                centers: vec![layer_id],
            };
            let (tuned, history) = fine_tune_tracked(&net, &data, &options, Some(eval))?;
            net = tuned;
            let recovery = history.last().copied().unwrap_or(damage);
            let mut curve = vec![damage];
            curve.extend(history);
            (damage, recovery, epochs_to_peak(&curve))
        };
        let costs = count_costs(&net)?;
        log::info!(
            "step {step}: layer {layer_id} kept {keep}/{n}, damage {acc_damage:.4}, recovery {acc_recovery:.4}"
        );
        report.steps.push(StepRecord {
            step,
            layer_id,
            criterion: config.criterion,
            kept: keep.min(n),
            acc_damage: acc_damage as f32,
            acc_recovery: acc_recovery as f32,
            epochs_to_peak: peak,
            params: costs.params,
            mult_adds: costs.mult_adds,
            wall_seconds: step_start.elapsed().as_secs_f64(),
        });
    }

    let final_accuracy = if pruned_layers.is_empty() || config.final_finetune_epochs == 0 {
        evaluate(&net, eval)?
    } else {
        let mut final_settings = settings;
        final_settings.lr /= 10.0;
        let scope = config.retrain_scope;
        let options = FineTuneOptions {
            epochs: config.final_finetune_epochs,
            scope,
            fraction: 1.0,
            seed: config.seed.wrapping_add(order.len() as u64 + 1),
            settings: final_settings,
            centers: if scope == RetrainScope::Neighbors { pruned_layers } else { Vec::new() },
        };
        net = fine_tune_tracked(&net, &data, &options, None)?.0;
        evaluate(&net, eval)?
    };
    report.final_accuracy = Some(final_accuracy as f32);
    report.final_costs = Some(count_costs(&net)?);
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(net)
}
