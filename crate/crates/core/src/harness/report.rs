//! Run reports on disk: a per-step CSV and a human-readable summary.
//!
//! Accuracies are written with nine significant digits in positional
//! notation, which is enough to read every `f32` back exactly. Costs and
//! counts are integers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::{RunReport, StepRecord};

pub const CSV_HEADER: [&str; 9] = [
    "step",
    "layer_id",
    "criterion",
    "kept",
    "acc_damage",
    "acc_recovery",
    "epochs_to_peak",
    "params",
    "mult_adds",
];

/// `v` with nine significant digits, never in exponent form.
pub fn format_sig9(v: f32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.8}");
    }
    let magnitude = f64::from(v.abs()).log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Serialises the step records as CSV (LF line endings).
pub fn report_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in &report.steps {
        w.write_record([
            s.step.to_string(),
            s.layer_id.to_string(),
            s.criterion.name().to_string(),
            s.kept.to_string(),
            format_sig9(s.acc_damage),
            format_sig9(s.acc_recovery),
            s.epochs_to_peak.to_string(),
            s.params.to_string(),
            s.mult_adds.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses step records written by [`report_csv`]. Wall times are not part of
/// the CSV and come back as zero.
pub fn parse_report_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::invalid(format!("unexpected report header {header:?}")));
    }
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |i: usize| Error::invalid(format!("row {row}: bad {} value {:?}", CSV_HEADER[i], field(i)));
        let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(i));
        let acc = |i: usize| field(i).parse::<f32>().map_err(|_| bad(i));
        out.push(StepRecord {
            step: int(0)? as usize,
            layer_id: int(1)? as usize,
            criterion: field(2).parse()?,
            kept: int(3)? as usize,
            acc_damage: acc(4)?,
            acc_recovery: acc(5)?,
            epochs_to_peak: int(6)? as usize,
            params: int(7)?,
            mult_adds: int(8)?,
            wall_seconds: 0.0,
        });
    }
    Ok(out)
}

/// Summary file path next to a report CSV: `run.csv` → `run.summary.txt`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.summary.txt"))
}

pub fn report_summary(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "criterion: {}", report.config.criterion);
    let _ = writeln!(s, "rng: {}", report.rng);
    let _ = writeln!(s, "baseline accuracy: {}", format_sig9(report.baseline_accuracy));
    let _ = writeln!(
        s,
        "baseline costs: {} params, {} mult-adds",
        report.baseline_costs.params, report.baseline_costs.mult_adds
    );
    for st in &report.steps {
        let _ = writeln!(
            s,
            "step {} layer {}: kept {}, damage {}, recovery {}, peak after {} epoch(s), {:.2}s",
            st.step,
            st.layer_id,
            st.kept,
            format_sig9(st.acc_damage),
            format_sig9(st.acc_recovery),
            st.epochs_to_peak,
            st.wall_seconds
        );
    }
    match (report.final_accuracy, report.final_costs) {
        (Some(a), Some(c)) => {
            let _ = writeln!(s, "final accuracy: {}", format_sig9(a));
            let _ = writeln!(s, "final costs: {} params, {} mult-adds", c.params, c.mult_adds);
        }
        _ => {
            let _ = writeln!(s, "run incomplete after {} step(s)", report.steps.len());
        }
    }
    let _ = writeln!(s, "wall time: {:.2}s", report.wall_seconds);
    let _ = writeln!(s, "\n[config]\n{}", report.config.to_toml());
    s
}

/// Writes the CSV to `csv_path` and the summary next to it.
pub fn emit_report(report: &RunReport, csv_path: &Path) -> Result<()> {
    std::fs::write(csv_path, report_csv(report)?).map_err(|e| Error::io(csv_path, e))?;
    let summary = summary_path(csv_path);
    std::fs::write(&summary, report_summary(report)).map_err(|e| Error::io(&summary, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::Criterion;
    use crate::pipeline::PruneConfig;
    use proptest::prelude::*;

    fn report(accs: &[(f32, f32)]) -> RunReport {
        let mut r = RunReport::new(PruneConfig::default(), 0.9, Default::default());
        for (i, &(d, rec)) in accs.iter().enumerate() {
            r.steps.push(StepRecord {
                step: i,
                layer_id: 10 - 2 * i,
                criterion: Criterion::Entropy,
                kept: 4,
                acc_damage: d,
                acc_recovery: rec,
                epochs_to_peak: 1,
                params: 1234,
                mult_adds: 56789,
                wall_seconds: 0.0,
            });
        }
        r
    }

    #[test]
    fn header_and_line_endings() {
        let text = report_csv(&report(&[(0.5, 0.75)])).unwrap();
        assert!(text.starts_with("step,layer_id,criterion,kept,acc_damage,acc_recovery,epochs_to_peak,params,mult_adds\n"));
        assert!(!text.contains('\r'));
        assert!(text.contains(",entropy,4,0.500000000,0.750000000,1,1234,56789\n"));
    }

    #[test]
    fn empty_schedule_writes_only_the_header() {
        let text = report_csv(&report(&[])).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(parse_report_csv(&text).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn csv_round_trips(accs in prop::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 0..6)) {
            let r = report(&accs);
            let back = parse_report_csv(&report_csv(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r.steps);
        }

        #[test]
        fn sig9_is_lossless(v in any::<f32>().prop_filter("finite", |v| v.is_finite())) {
            let s = format_sig9(v);
            prop_assert!(!s.contains('e'));
            prop_assert_eq!(s.parse::<f32>().unwrap().to_bits(), v.to_bits());
        }
    }
}
