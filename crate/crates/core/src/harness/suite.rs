use serde::{Deserialize, Serialize};

use super::evaluate::mean_std;
use super::{Assets, CurvePoint, InitMode, Run, RunConfig};
use crate::error::{Error, Result};
use crate::meta::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRow {
    pub seed: u64,
    pub template: usize,
    pub init: InitMode,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub accuracy_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    /// Per init mode: test accuracy mean and std over seeds (first template).
    pub init_accuracy: Vec<(InitMode, f64, f64)>,
    /// Per init mode: std of test accuracy across templates, averaged over seeds.
    pub template_std: Vec<(InitMode, f64)>,
    /// Per algorithm: test accuracy mean over seeds.
    pub algorithm_accuracy: Vec<(Algorithm, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub init_rows: Vec<InitRow>,
    pub algorithm_rows: Vec<AlgorithmRow>,
    pub summary: SuiteSummary,
}

impl SuiteReport {
    pub fn rows_for(&self, init: InitMode, template: usize) -> impl Iterator<Item = &InitRow> {
        self.init_rows
            .iter()
            .filter(move |r| r.init == init && r.template == template)
    }
}

/// Paired runs must draw identical episode streams.
pub fn check_pairing(configs: &[RunConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Ok(());
    };
    for (i, c) in configs.iter().enumerate().skip(1) {
        let mismatch = if c.seed != first.seed {
            Some("seed")
        } else if c.data != first.data {
            Some("data")
        } else if c.split != first.split {
            Some("split")
        } else if c.episodes != first.episodes {
            Some("episodes")
        } else if c.test != first.test || c.meta_train.val_episodes != first.meta_train.val_episodes {
            Some("test")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(Error::contract(format!(
                "config {i} is not paired with config 0: `{field}` differs"
            )));
        }
    }
    Ok(())
}

/// Init-mode ablation and template study for every seed and template, then
/// the algorithm comparison on the first template. `progress` receives a
/// line per finished run.
pub fn run_experiment_suite(assets: &Assets, cfg: &RunConfig, mut progress: impl FnMut(&str)) -> Result<SuiteReport> {
    if cfg.suite.seeds.is_empty() || cfg.suite.templates.is_empty() {
        return Err(Error::Config {
            key: "suite".into(),
            detail: "needs at least one seed and one template".into(),
        });
    }
    let mut init_rows = Vec::new();
    let mut algorithm_rows = Vec::new();
    for &seed in &cfg.suite.seeds {
        let seeded = RunConfig {
            seed,
            ..cfg.clone()
        };
        for (t, template) in cfg.suite.templates.iter().enumerate() {
            let run = Run::with_template(assets, &seeded, template)?;
            for mode in InitMode::ALL {
                let (params, _) = run.init(mode)?;
                let report = run.meta_test(&params)?;
                progress(&format!(
                    "seed {seed} template {t} init {}: accuracy {:.4}",
                    mode.name(),
                    report.accuracy_mean
                ));
                if t == 0 && mode == InitMode::Meta && cfg.suite.algorithms.contains(&cfg.meta.algorithm) {
                    algorithm_rows.push(AlgorithmRow {
                        seed,
                        algorithm: cfg.meta.algorithm,
                        accuracy_mean: report.accuracy_mean,
                    });
                }
                init_rows.push(InitRow {
                    seed,
                    template: t,
                    init: mode,
                    accuracy_mean: report.accuracy_mean,
                    accuracy_std: report.accuracy_std,
                    curve: report.curve,
                });
            }
        }
        for &algorithm in &cfg.suite.algorithms {
            if algorithm == cfg.meta.algorithm {
                continue;
            }
            let mut variant = seeded.clone();
            variant.meta.algorithm = algorithm;
            check_pairing(&[seeded.clone(), variant.clone()])?;
            let run = Run::new(assets, &variant)?;
            let (params, _) = run.init(InitMode::Meta)?;
            let report = run.meta_test(&params)?;
            progress(&format!(
                "seed {seed} algorithm {}: accuracy {:.4}",
                algorithm.name(),
                report.accuracy_mean
            ));
            algorithm_rows.push(AlgorithmRow {
                seed,
                algorithm,
                accuracy_mean: report.accuracy_mean,
            });
        }
    }
    algorithm_rows.sort_by_key(|r| (cfg.suite.algorithms.iter().position(|a| *a == r.algorithm), r.seed));
    let summary = summarize(cfg, &init_rows, &algorithm_rows);
    Ok(SuiteReport {
        init_rows,
        algorithm_rows,
        summary,
    })
}

fn summarize(cfg: &RunConfig, init_rows: &[InitRow], algorithm_rows: &[AlgorithmRow]) -> SuiteSummary {
    let init_accuracy = InitMode::ALL
        .iter()
        .map(|&m| {
            let accs: Vec<f64> = init_rows
                .iter()
                .filter(|r| r.init == m && r.template == 0)
                .map(|r| r.accuracy_mean)
                .collect();
            let (mean, std) = mean_std(&accs);
            (m, mean, std)
        })
        .collect();
    let template_std = InitMode::ALL
        .iter()
        .map(|&m| {
            let per_seed: Vec<f64> = cfg
                .suite
                .seeds
                .iter()
                .map(|&s| {
                    let accs: Vec<f64> = init_rows
                        .iter()
                        .filter(|r| r.init == m && r.seed == s)
                        .map(|r| r.accuracy_mean)
                        .collect();
                    mean_std(&accs).1
                })
                .collect();
            (m, mean_std(&per_seed).0)
        })
        .collect();
    let algorithm_accuracy = cfg
        .suite
        .algorithms
        .iter()
        .map(|&a| {
            let accs: Vec<f64> = algorithm_rows
                .iter()
                .filter(|r| r.algorithm == a)
                .map(|r| r.accuracy_mean)
                .collect();
            (a, mean_std(&accs).0)
        })
        .collect();
    SuiteSummary {
        init_accuracy,
        template_std,
        algorithm_accuracy,
    }
}
