//! Plain-text tables for evaluation, comparison, and timing results.

use std::fmt::Write;

use crate::benchmark::CompareReport;
use crate::metrics::MetricSummary;
use crate::trainer::{CalibrationReport, TimingReport};

fn pad_rows(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if c + 1 < r.len() {
                let pad = widths[c] - cell.chars().count();
                line.extend(std::iter::repeat_n(' ', pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn format_summary(s: &MetricSummary) -> String {
    match s.stderr {
        Some(se) => format!("{:.4} ± {:.4}", s.mean, se),
        None => format!("{:.4}", s.mean),
    }
}

/// One model on one evaluation set.
pub fn evaluation_table(name: &str, r: &CalibrationReport) -> String {
    let mut rows = vec![vec![
        "Model".to_string(),
        "R10@1 ↑".to_string(),
        "MAP ↑".to_string(),
        "ECE ↓".to_string(),
        "Accuracy ↑".to_string(),
    ]];
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    rows.push(vec![
        name.to_string(),
        opt(r.r10_at_1()),
        opt(r.map()),
        format!("{:.4}", r.ece),
        format!("{:.4}", r.accuracy),
    ]);
    let mut out = pad_rows(&rows);
    let _ = writeln!(out, "examples: {}", r.examples);
    if let Some(rk) = &r.ranking {
        let _ = writeln!(out, "groups: {} (tied positives: {})", rk.groups, rk.ties);
    }
    out
}

/// Mean ± standard error per variant, one block per evaluation set.
pub fn comparison_table(report: &CompareReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "seeds: {}",
        report
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    for set in &report.eval_sets {
        let _ = writeln!(out, "\n[{set}]");
        let mut rows = vec![vec![
            "Model".to_string(),
            "R10@1 ↑".to_string(),
            "MAP ↑".to_string(),
            "ECE ↓".to_string(),
        ]];
        for row in &report.rows {
            let Some(cell) = row.cells.iter().find(|c| &c.eval_set == set) else {
                continue;
            };
            let opt =
                |s: &Option<MetricSummary>| s.as_ref().map_or("-".to_string(), format_summary);
            rows.push(vec![
                row.variant.label().to_string(),
                opt(&cell.r10_at_1),
                opt(&cell.map),
                format_summary(&cell.ece),
            ]);
        }
        out.push_str(&pad_rows(&rows));
    }
    out
}

pub fn timing_table(report: &TimingReport) -> String {
    let mut rows = vec![vec![
        "Model".to_string(),
        "Params".to_string(),
        "Trainable".to_string(),
        "Time (s)".to_string(),
    ]];
    for e in &report.entries {
        rows.push(vec![
            e.label.clone(),
            e.params.to_string(),
            e.trainable_params.to_string(),
            format!("{:.4} ({:.2}×)", e.median_seconds, e.relative),
        ]);
    }
    let mut out = pad_rows(&rows);
    let _ = writeln!(
        out,
        "median of {} repetitions over {} examples",
        report.repetitions, report.examples
    );
    out
}
