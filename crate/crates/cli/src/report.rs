//! Comparison tables and curve bundles from run manifests.
//!
//! Metric cells print as `mean±std` on the 0-100 scale with one decimal.
//! The convergence-variance column uses the same scale as the error-rate
//! curve it was computed from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hagnet_core::training::MetricSummary;

use crate::commands::MetricsDoc;
use crate::manifest::{resolve, RunManifest};
use crate::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_name: String,
    pub aupr_harmonic: MetricSummary,
    pub error_rate: MetricSummary,
    pub mstd_error_rate: MetricSummary,
}

pub fn cell(summary: MetricSummary, scale: f64) -> String {
    format!("{:.1}±{:.1}", summary.mean * scale, summary.std * scale)
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let mut widths = [8usize, 8, 8, 10];
    for row in rows {
        widths[0] = widths[0].max(row.run_name.len());
        widths[1] = widths[1].max(cell(row.aupr_harmonic, 100.0).len());
        widths[2] = widths[2].max(cell(row.error_rate, 100.0).len());
        widths[3] = widths[3].max(cell(row.mstd_error_rate, 100.0).len());
    }
    let mut out = format!(
        "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
        "run",
        "AuPR",
        "ER",
        "mstd(ER)",
        w0 = widths[0],
        w1 = widths[1],
        w2 = widths[2],
        w3 = widths[3],
    );
    for row in rows {
        out.push_str(&format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
            row.run_name,
            cell(row.aupr_harmonic, 100.0),
            cell(row.error_rate, 100.0),
            cell(row.mstd_error_rate, 100.0),
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
        ));
    }
    out
}

/// Loads and verifies each manifest, pulls its metrics document, and copies
/// curve CSVs into `out_dir/curves/` for external plotting.
pub fn build_report(manifest_paths: &[PathBuf], out_dir: &Path) -> Result<(String, Vec<ReportRow>)> {
    if manifest_paths.is_empty() {
        return Err(CliError::validation("report needs at least one manifest"));
    }
    fs::create_dir_all(out_dir.join("curves"))?;
    let mut rows = Vec::with_capacity(manifest_paths.len());
    for path in manifest_paths {
        let manifest = RunManifest::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.verify(base)?;
        let metrics_entry = manifest
            .artifacts
            .iter()
            .find(|a| a.path.ends_with("metrics.json"))
            .ok_or_else(|| {
                CliError::validation(format!("{} lists no metrics.json artifact", path.display()))
            })?;
        let metrics_path = resolve(base, &metrics_entry.path);
        let text = fs::read_to_string(&metrics_path)?;
        let doc: MetricsDoc = serde_json::from_str(&text)?;
        rows.push(ReportRow {
            run_name: manifest.run_name.clone(),
            aupr_harmonic: doc.summary.aupr_harmonic,
            error_rate: doc.summary.error_rate,
            mstd_error_rate: doc.summary.mstd_error_rate,
        });
        for artifact in &manifest.artifacts {
            if artifact.path.ends_with(".csv") {
                let src = resolve(base, &artifact.path);
                let file_name = src
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "curve.csv".to_string());
                let dst = out_dir
                    .join("curves")
                    .join(format!("{}__{}", manifest.run_name, file_name));
                fs::copy(&src, &dst)?;
            }
        }
    }
    let table = render_table(&rows);
    fs::write(out_dir.join("report.txt"), &table)?;
    let mut csv = String::from(
        "run,aupr_harmonic_mean,aupr_harmonic_std,error_rate_mean,error_rate_std,mstd_er_mean,mstd_er_std\n",
    );
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.run_name,
            row.aupr_harmonic.mean,
            row.aupr_harmonic.std,
            row.error_rate.mean,
            row.error_rate.std,
            row.mstd_error_rate.mean,
            row.mstd_error_rate.std,
        ));
    }
    fs::write(out_dir.join("report.csv"), csv)?;
    Ok((table, rows))
}
