//! Report assembly and output files.
//!
//! `metrics.csv`: `model,row,scorer,epsilon,calibration_f_measure,sensitivity,precision,f_measure,tp,fp,tn,fn`
//!
//! `roc.csv`: `model,scorer,auc,threshold,fpr,tpr`, one line per curve point.
//!
//! `score_over_time.csv`: `model,scorer,step,normal_mean,normal_sd,anomalous_mean,anomalous_sd`
//!
//! `summary.json` holds the same numbers plus the configuration echo.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{plot, MetricRow, RocEntry, ScoreOverTimeEntry};
use crate::error::{IoContext, Result};

/// Whether this build can draw PNG plots.
pub const PLOTS_ENABLED: bool = cfg!(feature = "plots");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub rows: Vec<MetricRow>,
    pub roc: Vec<RocEntry>,
    pub score_over_time: Vec<ScoreOverTimeEntry>,
    pub config: serde_json::Value,
}

impl Report {
    pub fn row(&self, model: &str, row: super::AblationRow) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.model == model && r.row == row)
    }

    pub fn auc(&self, model: &str, scorer: crate::detector::Scorer) -> Option<f64> {
        self.roc
            .iter()
            .find(|r| r.model == model && r.scorer == scorer)
            .map(|r| r.curve.auc)
    }
}

pub fn metrics_csv(report: &Report) -> String {
    let mut s = String::from(
        "model,row,scorer,epsilon,calibration_f_measure,sensitivity,precision,f_measure,tp,fp,tn,fn\n",
    );
    for r in &report.rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.row.label(),
            r.scorer.name(),
            r.epsilon,
            r.calibration_f_measure,
            m.sensitivity,
            m.precision,
            m.f_measure,
            m.counts.tp,
            m.counts.fp,
            m.counts.tn,
            m.counts.fn_
        );
    }
    s
}

pub fn roc_csv(report: &Report) -> String {
    let mut s = String::from("model,scorer,auc,threshold,fpr,tpr\n");
    for e in &report.roc {
        for p in &e.curve.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.model,
                e.scorer.name(),
                e.curve.auc,
                p.threshold.map(|t| t.to_string()).unwrap_or_default(),
                p.fpr,
                p.tpr
            );
        }
    }
    s
}

pub fn score_over_time_csv(report: &Report) -> String {
    let mut s = String::from("model,scorer,step,normal_mean,normal_sd,anomalous_mean,anomalous_sd\n");
    for e in &report.score_over_time {
        let b = &e.bands;
        for t in 0..b.normal_mean.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.model,
                e.scorer.name(),
                t,
                b.normal_mean[t],
                b.normal_sd[t],
                b.anomalous_mean[t],
                b.anomalous_sd[t]
            );
        }
    }
    s
}

fn write(path: PathBuf, contents: &[u8], out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).ctx(|| format!("writing {}", path.display()))?;
    out.push(path);
    Ok(())
}

/// Write the CSVs, the JSON summary and, when built with plotting, one ROC
/// and one score-over-time PNG per model. Returns the written paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).ctx(|| format!("creating {}", dir.display()))?;
    let mut out = Vec::new();
    write(dir.join("metrics.csv"), metrics_csv(report).as_bytes(), &mut out)?;
    write(dir.join("roc.csv"), roc_csv(report).as_bytes(), &mut out)?;
    write(dir.join("score_over_time.csv"), score_over_time_csv(report).as_bytes(), &mut out)?;
    write(dir.join("summary.json"), &serde_json::to_vec_pretty(report)?, &mut out)?;
    if PLOTS_ENABLED {
        out.extend(plot::draw_all(report, dir)?);
    } else {
        log::warn!("built without the `plots` feature; skipping PNG output");
    }
    Ok(out)
}
