//! Command-line interface.
//!
//! Every verb reads and writes the binary container files (datasets,
//! checkpoints, statistics) and plain CSV reports. On failure the process
//! exits with status 2 and prints `error[<category>]: <message>` on stderr.
//! `FILTERPRUNE_THREADS` sets the number of evaluation threads.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::netgraph::{build_model, count_costs, read_checkpoint, write_checkpoint, ArchSpec, Family, NetworkGraph};
use crate::pipeline::{run_prune_schedule_into, train_from_scratch, PruneConfig, PrunePercent, RetrainScope, RunReport, TrainSettings};
use crate::stats::{collect_stats, StatsOptions};
use crate::surgery::ResidualMode;
use crate::tensor::{check_gradients, Tensor};

use super::{
    build_class_subset, emit_report, evaluate, load_dataset, parse_report_csv, ClassSubsetSpec, Dataset, Split,
};

pub const THREADS_ENV: &str = "FILTERPRUNE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "filterprune", version, about = "Structured filter pruning for small CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a public dataset or generate a synthetic one.
    Ingest(IngestArgs),
    /// Train a fresh network on the train split.
    Train(TrainArgs),
    /// Collect per-filter statistics.
    Stats(StatsArgs),
    /// Run a pruning schedule.
    Prune(PruneArgs),
    /// Top-1 accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Build a class-subset dataset.
    Subset(SubsetArgs),
    /// Print one or more report CSVs side by side.
    Report(ReportArgs),
    /// Compare analytic and numerical gradients in 64-bit precision.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IngestFormat {
    Optdigits,
    Synthetic,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(value_enum)]
    pub format: IngestFormat,
    /// Source table (optdigits).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Synthetic: number of classes.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Synthetic: number of images.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Synthetic: C,H,W.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 8, 8])]
    pub shape: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "vgg-tiny")]
    pub family: String,
    /// Conv widths (vgg-tiny) or [stem, a1, b1, a2, b2, ...] (resnet-tiny).
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 16, 32, 32])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub dense_width: usize,
}

impl ModelArgs {
    fn spec(&self, shape: [usize; 3], classes: usize) -> Result<ArchSpec> {
        let family: Family = self.family.parse()?;
        let mut spec = match family {
            Family::VggTiny => ArchSpec::vgg_tiny(&self.widths, shape, classes),
            Family::ResnetTiny => ArchSpec::resnet_tiny(&self.widths, shape, classes),
        };
        spec.dense_width = self.dense_width;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Also accumulate per-example gradient statistics.
    #[arg(long)]
    pub gradients: bool,
    #[arg(long, default_value_t = crate::stats::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with PruneConfig keys; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub criterion: Option<String>,
    /// One value for every layer, or a comma-separated value per conv layer.
    #[arg(long, value_delimiter = ',')]
    pub prune_percent: Option<Vec<u32>>,
    #[arg(long)]
    pub differential_budget: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub final_finetune_epochs: Option<usize>,
    #[arg(long)]
    pub retrain_scope: Option<String>,
    #[arg(long)]
    pub data_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub skip_layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub class_set: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub residual_mode: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
}

impl PruneArgs {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn resolve_config(&self) -> Result<PruneConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<PruneConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => PruneConfig::default(),
        };
        if let Some(c) = &self.criterion {
            cfg.criterion = c.parse::<Criterion>()?;
        }
        if let Some(p) = &self.prune_percent {
            cfg.prune_percent = match p.as_slice() {
                [m] => PrunePercent::Uniform(*m),
                ms => PrunePercent::PerLayer(ms.to_vec()),
            };
        }
        if self.differential_budget.is_some() {
            cfg.differential_budget = self.differential_budget;
        }
        if let Some(v) = self.finetune_epochs {
            cfg.finetune_epochs = v;
        }
        if let Some(v) = self.final_finetune_epochs {
            cfg.final_finetune_epochs = v;
        }
        if let Some(v) = &self.retrain_scope {
            cfg.retrain_scope = v.parse::<RetrainScope>()?;
        }
        if let Some(v) = self.data_fraction {
            cfg.data_fraction = v;
        }
        if let Some(v) = &self.skip_layers {
            cfg.skip_layers = Some(v.clone());
        }
        if let Some(v) = &self.class_set {
            cfg.class_set = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = &self.residual_mode {
            cfg.residual_mode = v.parse::<ResidualMode>()?;
        }
        if let Some(v) = self.bins {
            cfg.bins = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// C,H,W of the random input.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 8, 8])]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Fail when the maximum relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn shape3(v: &[usize]) -> Result<[usize; 3]> {
    <[usize; 3]>::try_from(v).map_err(|_| Error::invalid(format!("shape needs three values C,H,W, got {v:?}")))
}

fn split_arg(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// Configures the global evaluation thread pool from `FILTERPRUNE_THREADS`.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            2
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Prune(a) => prune_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Subset(a) => subset_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let ds = match a.format {
        IngestFormat::Optdigits => {
            let input = a
                .input
                .ok_or_else(|| Error::invalid("optdigits ingestion needs --input"))?;
            Dataset::from_optdigits(&input, a.test_fraction, a.seed)?
        }
        IngestFormat::Synthetic => Dataset::synthetic(a.seed, a.classes, a.count, shape3(&a.shape)?),
    };
    ds.write(&a.out)?;
    println!(
        "{}: {} images of shape {:?}, {} classes, {} train / {} test",
        ds.name(),
        ds.len(),
        ds.shape(),
        ds.class_count(),
        ds.split(Split::Train).len(),
        ds.split(Split::Test).len()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let ds = Dataset::read(&a.data)?;
    let spec = a.model.spec(ds.shape(), ds.class_count())?;
    let settings = TrainSettings {
        lr: a.lr,
        momentum: a.momentum,
        batch_size: a.batch_size,
    };
    let net: NetworkGraph<f32> = train_from_scratch(&spec, &ds.split(Split::Train), a.epochs, a.seed, settings)?;
    write_checkpoint(&net, &a.out)?;
    let costs = count_costs(&net)?;
    println!(
        "test accuracy {:.4}; {} params, {} mult-adds",
        evaluate(&net, &ds.split(Split::Test))?,
        costs.params,
        costs.mult_adds
    );
    Ok(())
}

fn stats_cmd(a: StatsArgs) -> Result<()> {
    let net: NetworkGraph<f32> = read_checkpoint(&a.model)?;
    let ds = load_dataset(&a.data, split_arg(&a.split)?)?;
    let stats = collect_stats(
        &net,
        &ds,
        StatsOptions {
            with_gradients: a.gradients,
            bins: a.bins,
        },
    )?;
    stats.write(&a.out)?;
    for l in &stats.layers {
        let means = stats.mean_activation(l.layer_id)?;
        let apoz = stats.apoz(l.layer_id)?;
        println!(
            "layer {}: {} filters, mean activation {:.4}, APoZ {:.4}",
            l.layer_id,
            l.filters(),
            means.iter().sum::<f64>() / means.len() as f64,
            apoz.iter().sum::<f64>() / apoz.len() as f64
        );
    }
    Ok(())
}

fn prune_cmd(a: PruneArgs) -> Result<()> {
    let cfg = a.resolve_config()?;
    let net: NetworkGraph<f32> = read_checkpoint(&a.model)?;
    let ds = Dataset::read(&a.data)?;
    let mut report = RunReport::new(cfg.clone(), 0.0, Default::default());
    let result = run_prune_schedule_into(&net, &cfg, &ds.split(Split::Train), &ds.split(Split::Test), &mut report);
    emit_report(&report, &a.report)?;
    let pruned = result?;
    if let Some(out) = &a.out {
        write_checkpoint(&pruned, out)?;
    }
    println!(
        "baseline {:.4} -> final {:.4} after {} step(s)",
        report.baseline_accuracy,
        report.final_accuracy.unwrap_or(f32::NAN),
        report.steps.len()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let net: NetworkGraph<f32> = read_checkpoint(&a.model)?;
    let ds = load_dataset(&a.data, split_arg(&a.split)?)?;
    println!("{:.6}", evaluate(&net, &ds)?);
    Ok(())
}

fn subset_cmd(a: SubsetArgs) -> Result<()> {
    let ds = Dataset::read(&a.data)?;
    let spec = ClassSubsetSpec::new(ds.name(), &a.classes);
    let sub = build_class_subset(&ds, &spec)?;
    sub.write(&a.out)?;
    println!("{}: {} images", sub.name(), sub.len());
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    for path in &a.csv {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let steps = parse_report_csv(&text)?;
        println!("{}", path.display());
        println!("  step layer criterion        kept  damage    recovery  peak");
        for s in steps {
            println!(
                "  {:>4} {:>5} {:<16} {:>4}  {:<8.4}  {:<8.4}  {}",
                s.step, s.layer_id, s.criterion, s.kept, s.acc_damage, s.acc_recovery, s.epochs_to_peak
            );
        }
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let shape = shape3(&a.shape)?;
    let spec = a.model.spec(shape, a.classes)?;
    let net: NetworkGraph<f64> = build_model(&spec, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x9e37);
    let len = a.batch * shape.iter().product::<usize>();
    let x = Tensor::from_vec(
        &[a.batch, shape[0], shape[1], shape[2]],
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let labels: Vec<usize> = (0..a.batch).map(|_| rng.gen_range(0..a.classes)).collect();
    let err = check_gradients(&net, &x, &labels, a.epsilon)?;
    println!("max relative error {err:.3e}");
    if err > a.tolerance {
        return Err(Error::GradCheck {
            max: err,
            tolerance: a.tolerance,
        });
    }
    Ok(())
}
