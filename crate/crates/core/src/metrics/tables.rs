//! Markdown rendering of metric tables and matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ConfusionMatrix, DifferenceMatrix, EvalReport};
use crate::model::{Condition, FallacyLabel};

/// Integer percent, rounded half-up. The small epsilon keeps values such as
/// 0.285 (stored as 0.28499…) on the side their decimal form rounds to.
pub fn percent(value: f64) -> u32 {
    (value * 100.0 + 0.5 + 1e-9).floor().max(0.0) as u32
}

pub fn format_percent(value: f64) -> String {
    format!("{}%", percent(value))
}

/// Formats one row; every cell equal to the row maximum (after rounding) is
/// bolded.
fn row(label: &str, values: &[f64]) -> String {
    let rounded: Vec<u32> = values.iter().map(|&v| percent(v)).collect();
    let max = rounded.iter().copied().max().unwrap_or(0);
    let cells: Vec<String> = rounded
        .iter()
        .map(|&p| if p == max { format!("**{p}%**") } else { format!("{p}%") })
        .collect();
    format!("| {label} | {} |", cells.join(" | "))
}

fn header(first: &str, columns: &[String]) -> String {
    let mut out = format!("| {first} | {} |\n", columns.join(" | "));
    out.push_str("|---|");
    for _ in columns {
        out.push_str("---:|");
    }
    out
}

type Getter<T> = fn(&T) -> f64;

/// Overall and per-class tables with one column per condition, in B, C, C + A
/// order.
pub fn render_tables(reports: &BTreeMap<Condition, EvalReport>) -> String {
    let conditions: Vec<Condition> = reports.keys().copied().collect();
    let columns = |prefix: &str| -> Vec<String> {
        conditions
            .iter()
            .map(|c| {
                if prefix.is_empty() {
                    c.short().to_string()
                } else {
                    format!("{prefix}-{}", c.short())
                }
            })
            .collect()
    };

    let mut out = String::new();
    out.push_str("#### Overall metrics\n\n");
    out.push_str(&header("Metric", &columns("")));
    out.push('\n');
    let overall: [(&str, Getter<EvalReport>); 5] = [
        ("Accuracy", |r| r.accuracy),
        ("Macro Precision", |r| r.macro_precision),
        ("Macro Recall", |r| r.macro_recall),
        ("Macro F1", |r| r.macro_f1),
        ("Weighted F1", |r| r.weighted_f1),
    ];
    for (name, get) in overall {
        let values: Vec<f64> = reports.values().map(get).collect();
        out.push_str(&row(name, &values));
        out.push('\n');
    }

    let per_class: [(&str, &str, Getter<super::ClassMetrics>); 3] = [
        ("F1", "F1", |c| c.f1),
        ("Precision", "P", |c| c.precision),
        ("Recall", "R", |c| c.recall),
    ];
    for (title, prefix, get) in per_class {
        let _ = write!(out, "\n#### Per-class {title}\n\n");
        out.push_str(&header("Fallacy Type", &columns(prefix)));
        out.push('\n');
        for label in FallacyLabel::ALL {
            let values: Vec<f64> = reports
                .values()
                .map(|r| get(&r.per_class[label.index()]))
                .collect();
            out.push_str(&row(label.name(), &values));
            out.push('\n');
        }
    }

    let unparsable: Vec<String> = reports
        .iter()
        .filter(|(_, r)| r.unparsable_count > 0)
        .map(|(c, r)| format!("{}: {}", c.short(), r.unparsable_count))
        .collect();
    if !unparsable.is_empty() {
        let _ = write!(out, "\nUnparsable responses (scored as wrong): {}\n", unparsable.join(", "));
    }
    out
}

fn matrix_header() -> String {
    let mut columns: Vec<String> = FallacyLabel::ALL.iter().map(|l| l.code().to_string()).collect();
    columns.push("unparsable".into());
    header("gold \\ predicted", &columns)
}

pub fn render_matrix(matrix: &ConfusionMatrix) -> String {
    let mut out = matrix_header();
    out.push('\n');
    for label in FallacyLabel::ALL {
        let i = label.index();
        let cells: Vec<String> = matrix.counts[i].iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "| {} {} | {} | {} |",
            label.code(),
            label.name(),
            cells.join(" | "),
            matrix.unparsed[i]
        );
    }
    out
}

pub fn render_difference(diff: &DifferenceMatrix) -> String {
    let signed = |v: i64| if v > 0 { format!("+{v}") } else { v.to_string() };
    let mut out = matrix_header();
    out.push('\n');
    for label in FallacyLabel::ALL {
        let i = label.index();
        let cells: Vec<String> = diff.deltas[i].iter().map(|&v| signed(v)).collect();
        let _ = writeln!(
            out,
            "| {} {} | {} | {} |",
            label.code(),
            label.name(),
            cells.join(" | "),
            signed(diff.unparsed[i])
        );
    }
    out
}
