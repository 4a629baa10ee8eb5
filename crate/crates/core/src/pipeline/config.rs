use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::surgery::ResidualMode;

/// Which parameters fine-tuning may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrainScope {
    All,
    FcOnly,
    ConvOnly,
    /// The weighted layers immediately before and after the pruned layer,
    /// and the pruned layer itself.
    Neighbors,
}

impl RetrainScope {
    pub const ALL: [RetrainScope; 4] = [
        RetrainScope::All,
        RetrainScope::FcOnly,
        RetrainScope::ConvOnly,
        RetrainScope::Neighbors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetrainScope::All => "all",
            RetrainScope::FcOnly => "fc-only",
            RetrainScope::ConvOnly => "conv-only",
            RetrainScope::Neighbors => "neighbors",
        }
    }
}

impl fmt::Display for RetrainScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RetrainScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrainScope::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown retrain scope {s:?}")))
    }
}

/// Percentage of filters to prune: one value for every layer, or one per
/// conv layer in network order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrunePercent {
    Uniform(u32),
    PerLayer(Vec<u32>),
}

impl Default for PrunePercent {
    fn default() -> Self {
        PrunePercent::Uniform(50)
    }
}

/// SGD hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a finite value >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything that defines one pruning run. Field names double as the keys
/// of the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub criterion: Criterion,
    pub prune_percent: PrunePercent,
    /// When set, replaces `prune_percent` with a global filter budget split
    /// across layers in proportion to the square of their widths.
    pub differential_budget: Option<usize>,
    /// Fine-tuning epochs after each layer (`p`).
    pub finetune_epochs: usize,
    /// Fine-tuning epochs after the last layer (`q`), at a tenth of `lr`.
    pub final_finetune_epochs: usize,
    pub retrain_scope: RetrainScope,
    /// Class-stratified share of the training split used for statistics and
    /// fine-tuning.
    pub data_fraction: f64,
    /// Conv layer ids never pruned. `None` means: the first conv layer of a
    /// plain network, nothing for a residual one.
    pub skip_layers: Option<Vec<usize>>,
    pub class_set: Option<Vec<usize>>,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Residual networks: prune the first or the first two layers per block.
    pub residual_mode: ResidualMode,
    pub bins: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            criterion: Criterion::L1Norm,
            prune_percent: PrunePercent::default(),
            differential_budget: None,
            finetune_epochs: 1,
            final_finetune_epochs: 4,
            retrain_scope: RetrainScope::All,
            data_fraction: 1.0,
            skip_layers: None,
            class_set: None,
            seed: 0,
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            residual_mode: ResidualMode::FirstOnly,
            bins: crate::stats::DEFAULT_BINS,
        }
    }
}

impl PruneConfig {
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad_percent = |m: u32| m >= 100;
        match &self.prune_percent {
            PrunePercent::Uniform(m) if bad_percent(*m) => {
                return Err(Error::Config(format!("prune_percent {m} must be in [0, 100)")));
            }
            PrunePercent::PerLayer(ms) if ms.iter().copied().any(bad_percent) => {
                return Err(Error::Config(format!("prune_percent {ms:?}: every entry must be in [0, 100)")));
            }
            _ => {}
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data_fraction must be in (0, 1], got {}",
                self.data_fraction
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if self.class_set.is_some() != (self.criterion == Criterion::ClassSpecific) {
            return Err(Error::Config(
                "class_set must be given exactly when criterion = \"class-specific\"".into(),
            ));
        }
        self.train_settings().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PruneConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
