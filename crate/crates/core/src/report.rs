//! Fixed-format rendering of a [`ComparisonTable`].
//!
//! Markdown puts one run per column under the usual result-row labels. CSV
//! has one run per row with six decimals. Neither includes measured wall
//! clock, so identical runs render identical bytes.

use std::fmt::Write as _;

use crate::pipeline::{ComparisonTable, RunReport};
use crate::train::Metrics;

pub const ROW_LABELS: [&str; 7] = [
    "Edge Processing Time (s)",
    "Transmission Time (s)",
    "Total Time (s)",
    "Recall",
    "Precision",
    "F1-Score",
    "Images Transmitted",
];

const MISSING: &str = "/";

fn percent(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn metric(m: Option<&Metrics>, f: impl Fn(&Metrics) -> String) -> String {
    m.map(f).unwrap_or_else(|| MISSING.to_owned())
}

fn column(r: &RunReport) -> [String; 7] {
    let m = r.metrics.as_ref();
    [
        format!("{:.2}", r.edge_time_s),
        format!("{:.2}", r.transmission_time_s),
        format!("{:.2}", r.total_s),
        metric(m, |m| percent(m.recall)),
        metric(m, |m| percent(m.precision)),
        metric(m, |m| format!("{:.2}", m.f1)),
        r.n_transmitted.to_string(),
    ]
}

/// Aligned markdown table, one column per run.
pub fn render_table(table: &ComparisonTable) -> String {
    let mut header = vec![String::new()];
    header.extend(table.rows.iter().map(RunReport::column_name));
    let columns: Vec<[String; 7]> = table.rows.iter().map(column).collect();
    let body: Vec<Vec<String>> = ROW_LABELS
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let mut row = vec![label.to_string()];
            row.extend(columns.iter().map(|c| c[i].clone()));
            row
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|j| body.iter().map(|row| row[j].len()).chain([header[j].len(), 3]).max().unwrap_or(3))
        .collect();

    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        out.push('|');
        for (j, cell) in cells.iter().enumerate() {
            if j == 0 {
                let _ = write!(out, " {:<w$} |", cell, w = widths[j]);
            } else {
                let _ = write!(out, " {:>w$} |", cell, w = widths[j]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    out.push('|');
    for (j, w) in widths.iter().enumerate() {
        let dashes = "-".repeat(*w);
        if j == 0 {
            let _ = write!(out, " {dashes} |");
        } else {
            let _ = write!(out, " {}: |", &dashes[1..]);
        }
    }
    out.push('\n');
    for row in &body {
        line(&mut out, row);
    }
    out
}

/// Full markdown report: the table plus total-time savings.
pub fn render_markdown(table: &ComparisonTable) -> String {
    let mut out = String::from("# Experiment Results\n\n");
    out.push_str(&render_table(table));
    let savings: Vec<String> = table
        .rows
        .iter()
        .zip(&table.time_saved_pct)
        .filter_map(|(r, s)| s.map(|s| (r, s)))
        .filter(|(r, _)| r.mode != crate::pipeline::RunMode::BentPipe)
        .map(|(r, s)| format!("- {}: {:.1}% less total time than bent pipe\n", r.column_name(), s))
        .collect();
    if !savings.is_empty() {
        out.push('\n');
        out.extend(savings);
    }
    out
}

pub const CSV_HEADER: &str = "mode,model,n_input,n_transmitted,edge_time_s,transmission_time_s,total_s,\
time_saved_pct,tp,fp,fn,tn,precision,recall,f1,accuracy,degenerate";

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// One line per run. Not-applicable cells are empty.
pub fn render_csv(table: &ComparisonTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (r, saved) in table.rows.iter().zip(&table.time_saved_pct) {
        let mut cells = vec![
            r.mode.name().to_owned(),
            r.model.clone().unwrap_or_default(),
            r.n_input.to_string(),
            r.n_transmitted.to_string(),
            num(r.edge_time_s),
            num(r.transmission_time_s),
            num(r.total_s),
            saved.map(num).unwrap_or_default(),
        ];
        match &r.metrics {
            Some(m) => cells.extend([
                m.tp.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                m.tn.to_string(),
                num(m.precision),
                num(m.recall),
                num(m.f1),
                num(m.accuracy),
                m.degenerate.to_string(),
            ]),
            None => cells.extend(std::iter::repeat_n(String::new(), 9)),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
