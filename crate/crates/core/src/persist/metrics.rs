//! Metric files of a run directory.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::RunDir;
use crate::error::Result;
use crate::harness::{CurvePoint, EpochRecord, InitMode, RunConfig, RunMetrics, SuiteReport, TestReport};

pub const CONFIG_FILE: &str = "config.resolved";
pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const CURVE_CSV: &str = "curve.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Every effective value of `cfg`, defaults included.
pub fn write_config(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.path(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(())
}

pub fn write_train_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_accuracy", "val_loss"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.val_accuracy.to_string(),
            h.val_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per episode, then a `mean` row.
pub fn write_test_csv(path: &Path, report: &TestReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "accuracy", "loss"])?;
    for e in &report.episodes {
        w.write_record([e.index.to_string(), e.accuracy.to_string(), e.loss.to_string()])?;
    }
    w.write_record([
        "mean".to_string(),
        report.accuracy_mean.to_string(),
        report.loss_mean.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "accuracy"])?;
    for c in curve {
        w.write_record([c.step.to_string(), c.loss.to_string(), c.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    init: InitMode,
    epochs_trained: usize,
    best_val_accuracy: Option<f64>,
    test_episodes: usize,
    test_accuracy_mean: f64,
    test_accuracy_std: f64,
    test_loss_mean: f64,
    final_curve_accuracy: Option<f64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `train.csv` (when there is a training history), `test.csv`, `curve.csv` and `summary.json`.
pub fn write_run_metrics(dir: &RunDir, metrics: &RunMetrics) -> Result<()> {
    if !metrics.train.is_empty() {
        write_train_csv(&dir.path(TRAIN_CSV), &metrics.train)?;
    }
    write_test_csv(&dir.path(TEST_CSV), &metrics.test)?;
    write_curve_csv(&dir.path(CURVE_CSV), &metrics.test.curve)?;
    let summary = Summary {
        config_hash: &metrics.config_hash,
        init: metrics.init,
        epochs_trained: metrics.train.len(),
        best_val_accuracy: metrics
            .train
            .iter()
            .map(|h| h.val_accuracy)
            .filter(|v| v.is_finite())
            .reduce(f64::max),
        test_episodes: metrics.test.episodes.len(),
        test_accuracy_mean: metrics.test.accuracy_mean,
        test_accuracy_std: metrics.test.accuracy_std,
        test_loss_mean: metrics.test.loss_mean,
        final_curve_accuracy: metrics.test.curve.last().map(|c| c.accuracy),
    };
    write_json(&dir.path(SUMMARY_JSON), &summary)
}

/// `suite_init.csv`, `suite_curves.csv`, `suite_algorithms.csv` and `suite_summary.json`.
pub fn write_suite_report(dir: &RunDir, report: &SuiteReport) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.path("suite_init.csv"))?;
    w.write_record(["seed", "template", "init", "accuracy_mean", "accuracy_std"])?;
    for r in &report.init_rows {
        w.write_record([
            r.seed.to_string(),
            r.template.to_string(),
            r.init.name().to_string(),
            r.accuracy_mean.to_string(),
            r.accuracy_std.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.path("suite_curves.csv"))?;
    w.write_record(["seed", "template", "init", "step", "loss", "accuracy"])?;
    for r in &report.init_rows {
        for c in &r.curve {
            w.write_record([
                r.seed.to_string(),
                r.template.to_string(),
                r.init.name().to_string(),
                c.step.to_string(),
                c.loss.to_string(),
                c.accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.path("suite_algorithms.csv"))?;
    w.write_record(["seed", "algorithm", "accuracy_mean"])?;
    for r in &report.algorithm_rows {
        w.write_record([r.seed.to_string(), r.algorithm.name().to_string(), r.accuracy_mean.to_string()])?;
    }
    w.flush()?;

    write_json(&dir.path("suite_summary.json"), &report.summary)
}
