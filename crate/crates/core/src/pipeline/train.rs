use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{evaluate, Dataset};
use crate::netgraph::{build_model, ArchSpec, NetworkGraph};
use crate::tensor::{LayerKind, Scalar, Sgd};

use super::{RetrainScope, TrainSettings};

/// How one fine-tuning call runs.
#[derive(Debug, Clone)]
pub struct FineTuneOptions {
    pub epochs: usize,
    pub scope: RetrainScope,
    /// Class-stratified share of the data to train on.
    pub fraction: f64,
    pub seed: u64,
    pub settings: TrainSettings,
    /// Layers whose neighbourhoods the `neighbors` scope trains.
    pub centers: Vec<usize>,
}

impl FineTuneOptions {
    pub fn new(epochs: usize, scope: RetrainScope, seed: u64, settings: TrainSettings) -> Self {
        Self {
            epochs,
            scope,
            fraction: 1.0,
            seed,
            settings,
            centers: Vec::new(),
        }
    }
}

/// Ids of the layers `scope` lets SGD update.
pub fn trainable_layers<S: Scalar>(network: &NetworkGraph<S>, scope: RetrainScope, centers: &[usize]) -> Result<Vec<usize>> {
    let params = network.param_layers();
    let kind = |id: usize| network.layers()[id].kind();
    Ok(match scope {
        RetrainScope::All => params,
        RetrainScope::ConvOnly => params.into_iter().filter(|&i| kind(i) == LayerKind::Conv2d).collect(),
        RetrainScope::FcOnly => params.into_iter().filter(|&i| kind(i) == LayerKind::Dense).collect(),
        RetrainScope::Neighbors => {
            if centers.is_empty() {
                return Err(Error::invalid("neighbors scope needs at least one pruned layer id"));
            }
            let mut out = Vec::new();
            for c in centers {
                let pos = params.iter().position(|p| p == c).ok_or_else(|| {
                    Error::invalid(format!("layer {c} has no parameters to center a neighbourhood on"))
                })?;
                out.extend(&params[pos.saturating_sub(1)..(pos + 2).min(params.len())]);
            }
            out.sort_unstable();
            out.dedup();
            out
        }
    })
}

/// Fine-tunes with SGD and returns the network.
pub fn fine_tune<S: Scalar>(network: &NetworkGraph<S>, data: &Dataset, options: &FineTuneOptions) -> Result<NetworkGraph<S>> {
    Ok(fine_tune_tracked(network, data, options, None)?.0)
}

/// Fine-tunes and, when `eval` is given, records the eval accuracy after
/// every epoch.
pub fn fine_tune_tracked<S: Scalar>(
    network: &NetworkGraph<S>,
    data: &Dataset,
    options: &FineTuneOptions,
    eval: Option<&Dataset>,
) -> Result<(NetworkGraph<S>, Vec<f64>)> {
    options.settings.validate()?;
    let mut net = network.clone();
    if options.epochs == 0 {
        return Ok((net, Vec::new()));
    }
    let train = data.stratified_fraction(options.fraction, options.seed)?;
    if train.is_empty() {
        return Err(Error::Dataset("fine-tuning set is empty".into()));
    }
    let trainable = trainable_layers(&net, options.scope, &options.centers)?;
    let mut sgd = Sgd::<S>::new(options.settings.lr, options.settings.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(options.settings.batch_size) {
            let (x, labels) = train.batch::<S>(chunk);
            let (_, grads, _) = net.gradients(&x, &labels)?;
            for &id in &trainable {
                let Some((gw, gb)) = &grads[id] else { continue };
                let layer = net.layer_mut(id).expect("trainable id exists");
                if let Some((w, b)) = layer.params_mut() {
                    w.set_grad(gw.data().to_vec())?;
                    b.set_grad(gb.data().to_vec())?;
                }
                sgd.step_layer(id, layer)?;
            }
        }
        log::debug!("fine-tune epoch {} of {} done", epoch + 1, options.epochs);
        if let Some(eval) = eval {
            history.push(evaluate(&net, eval)?);
        }
    }
    for &id in &trainable {
        if let Some((w, b)) = net.layer_mut(id).and_then(|l| l.params_mut()) {
            w.clear_grad();
            b.clear_grad();
        }
    }
    Ok((net, history))
}

/// Trains every layer of an existing network on all of `data`.
pub fn train<S: Scalar>(
    network: &NetworkGraph<S>,
    data: &Dataset,
    epochs: usize,
    seed: u64,
    settings: TrainSettings,
) -> Result<NetworkGraph<S>> {
    fine_tune(network, data, &FineTuneOptions::new(epochs, RetrainScope::All, seed, settings))
}

/// Builds a freshly initialised network from `spec` and trains it.
pub fn train_from_scratch<S: Scalar>(
    spec: &ArchSpec,
    data: &Dataset,
    epochs: usize,
    seed: u64,
    settings: TrainSettings,
) -> Result<NetworkGraph<S>> {
    let net = build_model(spec, seed)?;
    train(&net, data, epochs, seed, settings)
}

/// First epoch (0 = before any fine-tuning) whose accuracy is within
/// `0.0025` of the best in `history`.
pub fn epochs_to_peak(history: &[f64]) -> usize {
    let best = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    history.iter().position(|&a| a >= best - 0.0025).unwrap_or(0)
}
