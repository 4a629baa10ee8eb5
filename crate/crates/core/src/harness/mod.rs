//! Datasets, class subsets, evaluation, run reports and the command-line
//! surface.

pub mod cli;
mod dataset;
mod eval;
mod report;
mod subset;

pub use dataset::{load_dataset, Dataset, Split};
pub use eval::{argmax, evaluate, evaluate_subset};
pub use report::{
    emit_report, format_sig9, parse_report_csv, report_csv, report_summary, summary_path, CSV_HEADER,
};
pub use subset::{build_class_subset, ClassSubsetSpec};
