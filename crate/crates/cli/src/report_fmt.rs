//! Markdown and CSV rendering for reports.
//!
//! Score columns get significance annotations: values within 0.005 of the
//! column's best are bold (indistinguishably good), values at least 0.025
//! below it are marked red.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

pub const EQUAL_BAND: f64 = 0.005;
pub const WORSE_BAND: f64 = 0.025;

/// Formats a score to four decimals with the significance markup for its
/// column, given the column's best value.
pub fn annotate(score: f64, best: f64) -> String {
    let text = format!("{score:.4}");
    if score >= best - EQUAL_BAND {
        format!("**{text}**")
    } else if score <= best - WORSE_BAND {
        format!("<span style=\"color:red\">{text}</span>")
    } else {
        text
    }
}

pub fn column_best(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

/// Renders a GitHub-style markdown table. The first column is left
/// aligned, the rest right aligned.
pub fn md_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push('|');
    for header in headers {
        write!(out, " {header} |").unwrap();
    }
    out.push('\n');
    out.push('|');
    for (index, _) in headers.iter().enumerate() {
        out.push_str(if index == 0 { ":---|" } else { "---:|" });
    }
    out.push('\n');
    for row in rows {
        out.push('|');
        for cell in row {
            write!(out, " {cell} |").unwrap();
        }
        out.push('\n');
    }
    out
}

fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn csv_text(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(
        &headers
            .iter()
            .map(|h| csv_field(h))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in rows {
        out.push_str(
            &row.iter()
                .map(|cell| csv_field(cell))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
    std::fs::write(path, csv_text(headers, rows))
        .with_context(|| format!("writing {}", path.display()))
}
