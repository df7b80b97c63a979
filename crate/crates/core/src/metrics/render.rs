//! Aligned plain-text tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{DriftReport, MetricsReport};

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for r in rows {
        line(&mut out, r);
    }
    out
}

/// `Method | F1(%) | FNR | FPR | Acc.(%)`
pub fn render_metrics_table(rows: &[(&str, &MetricsReport)]) -> String {
    let header = ["Method", "F1(%)", "FNR", "FPR", "Acc.(%)"].map(String::from);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| {
            vec![
                name.to_string(),
                format!("{:.2}", 100.0 * m.macro_f1),
                format!("{:.4}", m.fnr),
                format!("{:.4}", m.fpr),
                format!("{:.2}", 100.0 * m.accuracy),
            ]
        })
        .collect();
    table(&header, &body)
}

/// Per-class F1 with one column per run.
pub fn render_class_f1_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut header = vec!["Class".to_string()];
    header.extend(rows.iter().map(|(n, _)| n.to_string()));
    let Some((_, first)) = rows.first() else {
        return table(&header, &[]);
    };
    let body: Vec<Vec<String>> = first
        .per_class
        .iter()
        .map(|c| {
            let mut r = vec![c.class.clone()];
            r.extend(rows.iter().map(|(_, m)| {
                m.class_f1(&c.class).map_or("-".to_string(), |f| format!("{f:.2}"))
            }));
            r
        })
        .collect();
    table(&header, &body)
}

/// `Class | #Source | #Target | Norm. EMD | <strategy selection counts>`
pub fn render_selection_table(drift: &DriftReport, strategies: &[(&str, &BTreeMap<String, usize>)]) -> String {
    let mut header = ["Class", "#Source", "#Target", "Norm. EMD"].map(String::from).to_vec();
    header.extend(strategies.iter().map(|(n, _)| n.to_string()));
    let body: Vec<Vec<String>> = drift
        .classes
        .iter()
        .map(|c| {
            let mut r = vec![
                c.class.clone(),
                c.source_count.to_string(),
                c.target_count.to_string(),
                c.normalized_emd.map_or("-".to_string(), |v| format!("{v:.4}")),
            ];
            r.extend(strategies.iter().map(|(_, counts)| counts.get(&c.class).copied().unwrap_or(0).to_string()));
            r
        })
        .collect();
    table(&header, &body)
}
