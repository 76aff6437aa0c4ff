//! Detection metrics and report files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sim::RoundReport;

/// Every excluded update of a run, grouped by epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropLog {
    /// `epochs[e]` lists `(client_id, was_malicious)` for epoch `e + 1`.
    pub epochs: Vec<Vec<(usize, bool)>>,
    pub total_epochs: usize,
    pub malicious_count: usize,
}

impl DropLog {
    pub fn new(total_epochs: usize, malicious_count: usize) -> Self {
        DropLog {
            epochs: Vec::new(),
            total_epochs,
            malicious_count,
        }
    }

    pub fn record(&mut self, drops: Vec<(usize, bool)>) {
        self.epochs.push(drops);
    }

    pub fn malicious_drops(&self) -> usize {
        self.epochs.iter().flatten().filter(|d| d.1).count()
    }

    pub fn benign_drops(&self) -> usize {
        self.epochs.iter().flatten().filter(|d| !d.1).count()
    }

    pub fn total_drops(&self) -> usize {
        self.epochs.iter().map(Vec::len).sum()
    }
}

/// Malicious drops over `malicious_count * T`, as a percentage.
pub fn detection_rate(log: &DropLog) -> Result<f64> {
    if log.malicious_count == 0 {
        return Err(Error::InvalidParameter("detection rate needs at least one malicious client".into()));
    }
    if log.total_epochs == 0 {
        return Err(Error::InvalidParameter("detection rate needs at least one epoch".into()));
    }
    Ok(log.malicious_drops() as f64 / (log.malicious_count * log.total_epochs) as f64 * 100.0)
}

/// Benign share of all drops, as a percentage; 0 when nothing was dropped.
pub fn avg_false_positive_rate(log: &DropLog) -> f64 {
    let total = log.total_drops();
    if total == 0 {
        return 0.0;
    }
    log.benign_drops() as f64 / total as f64 * 100.0
}

/// `benign / total * T * 2`, the alternative typeset form of the false
/// positive rate. Not a percentage; emitted for reference only.
pub fn afpr_paper_formula(log: &DropLog) -> f64 {
    let total = log.total_drops();
    if total == 0 {
        return 0.0;
    }
    log.benign_drops() as f64 / total as f64 * log.total_epochs as f64 * 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_gta: f64,
    pub detection_rate: Option<f64>,
    pub afpr: f64,
    pub afpr_paper_formula: f64,
    pub total_drops: usize,
    pub benign_drops: usize,
    pub malicious_drops: usize,
    pub malicious_clients: Vec<usize>,
    pub seed: u64,
    pub config: ExperimentConfig,
}

pub fn summarize(reports: &[RoundReport], log: &DropLog, cfg: &ExperimentConfig) -> RunSummary {
    RunSummary {
        final_gta: reports.last().map_or(0.0, |r| r.gta),
        detection_rate: detection_rate(log).ok(),
        afpr: avg_false_positive_rate(log),
        afpr_paper_formula: afpr_paper_formula(log),
        total_drops: log.total_drops(),
        benign_drops: log.benign_drops(),
        malicious_drops: log.malicious_drops(),
        malicious_clients: cfg.malicious_clients().into_iter().collect(),
        seed: cfg.seed,
        config: cfg.clone(),
    }
}

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DROPS_FILE: &str = "drops.csv";

/// Writes `epochs.csv`, `summary.json` and `drops.csv` into `out_dir`,
/// creating it if needed. Returns the summary.
pub fn emit_reports(reports: &[RoundReport], log: &DropLog, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;

    let mut w = csv::Writer::from_path(out_dir.join(EPOCHS_FILE))?;
    w.write_record(["epoch", "gta", "train_loss", "n_dropped", "n_dropped_malicious", "calibrated"])?;
    for (r, drops) in reports.iter().zip(log.epochs.iter().map(Some).chain(std::iter::repeat(None))) {
        let n_mal = drops.map_or(0, |d| d.iter().filter(|x| x.1).count());
        w.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.gta),
            format!("{:.6}", r.train_loss),
            r.dropped_ids.len().to_string(),
            n_mal.to_string(),
            r.calibrated.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join(DROPS_FILE))?;
    w.write_record(["epoch", "client_id", "malicious"])?;
    for (e, drops) in log.epochs.iter().enumerate() {
        for &(c, m) in drops {
            w.write_record([(e + 1).to_string(), c.to_string(), m.to_string()])?;
        }
    }
    w.flush()?;

    let summary = summarize(reports, log, cfg);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out_dir.join(SUMMARY_FILE), text)?;
    Ok(summary)
}
