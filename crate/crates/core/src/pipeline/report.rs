use crate::criteria::Criterion;
use crate::netgraph::Costs;

use super::PruneConfig;

/// One pruned layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub layer_id: usize,
    pub criterion: Criterion,
    pub kept: usize,
    /// Eval accuracy right after surgery.
    pub acc_damage: f32,
    /// Eval accuracy after the per-layer fine-tuning.
    pub acc_recovery: f32,
    pub epochs_to_peak: usize,
    /// Whole-network costs after this step.
    pub params: u64,
    pub mult_adds: u64,
    pub wall_seconds: f64,
}

/// Outcome of a pruning schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: PruneConfig,
    /// Generator used for shuffling, sampling and random scores.
    pub rng: &'static str,
    pub baseline_accuracy: f32,
    pub baseline_costs: Costs,
    pub steps: Vec<StepRecord>,
    pub final_accuracy: Option<f32>,
    pub final_costs: Option<Costs>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn new(config: PruneConfig, baseline_accuracy: f32, baseline_costs: Costs) -> Self {
        Self {
            config,
            rng: "ChaCha8",
            baseline_accuracy,
            baseline_costs,
            steps: Vec::new(),
            final_accuracy: None,
            final_costs: None,
            wall_seconds: 0.0,
        }
    }

    /// Whether the schedule ran to the end.
    pub fn is_complete(&self) -> bool {
        self.final_accuracy.is_some()
    }
}
