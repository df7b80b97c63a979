use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{CompletedRun, PreparedRun};
use crate::dataset::write_csv;
use crate::error::Result;
use crate::metrics::{render_class_f1_table, render_metrics_table, render_selection_table};

const SCORE_CAP: usize = 100_000;

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Configuration and selection of a run waiting for labels.
pub fn write_parked(run: &PreparedRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(dir, "config.json", &run.config)?;
    if let Some(sel) = run.selection() {
        write_json(dir, "selection.json", &sel.to_json(SCORE_CAP))?;
    }
    Ok(())
}

/// Every artifact of a finished run. Synthetic batches are written in the
/// original feature units.
pub fn write_artifacts(run: &CompletedRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let r = &run.result;
    write_json(dir, "result.json", r)?;
    write_json(dir, "model.json", &run.model.to_checkpoint())?;
    if let Some(sel) = &r.selection {
        write_json(dir, "selection.json", &sel.to_json(SCORE_CAP))?;
    }
    if let Some(m) = &r.pre {
        write_json(dir, "metrics_pre.json", m)?;
    }
    if let Some(m) = &r.post {
        write_json(dir, "metrics_post.json", m)?;
    }
    if let Some(d) = &r.drift {
        write_json(dir, "drift.json", d)?;
    }
    if let Some(a) = &r.augmentation {
        write_json(dir, "augmentation.json", a)?;
    }
    if let Some(g) = &run.generated {
        write_csv(&run.norm.invert(g)?, dir.join("synthetic_generated.csv"))?;
    }
    if let Some(k) = &run.retained {
        write_csv(&run.norm.invert(k)?, dir.join("synthetic_retained.csv"))?;
    }
    fs::write(dir.join("report.txt"), render_report(run))?;
    Ok(())
}

pub(crate) fn render_report(run: &CompletedRun) -> String {
    let r = &run.result;
    let mut out = format!("run {} ({})\n\n", r.run_id, r.strategy.name());
    let mut rows = Vec::new();
    if let Some(m) = &r.pre {
        rows.push(("no adaptation", m));
    }
    if let Some(m) = &r.post {
        rows.push((r.strategy.name(), m));
    }
    if !rows.is_empty() {
        out += &render_metrics_table(&rows);
        out += "\n";
        out += &render_class_f1_table(&rows);
        out += "\n";
    }
    if let Some(d) = &r.drift {
        let counts = r.selection.as_ref().and_then(|s| s.class_counts.clone()).unwrap_or_default();
        out += &render_selection_table(d, &[(r.strategy.name(), &counts)]);
    }
    out
}
