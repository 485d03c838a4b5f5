use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{train, SeedRun};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{table_header, table_row, METRIC_NAMES};

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Sample statistics (n − 1 denominator); one value gives std 0.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub top_set_ml: Summary,
    pub top1_ml: Summary,
    pub iou_acc: Summary,
    pub f1: Summary,
    pub map: Summary,
    pub avg_predicted_positives: Summary,
}

impl AggregateMetrics {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let col = |f: fn(&SeedRun) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            top_set_ml: col(|r| r.test.top_set_ml),
            top1_ml: col(|r| r.test.top1_ml),
            iou_acc: col(|r| r.test.iou_acc),
            f1: col(|r| r.test.f1),
            map: col(|r| r.test.map),
            avg_predicted_positives: col(|r| r.test.avg_predicted_positives),
        }
    }

    /// In table order, matching [`METRIC_NAMES`].
    pub fn summaries(&self) -> [Summary; 5] {
        [self.top_set_ml, self.top1_ml, self.iou_acc, self.f1, self.map]
    }
}

/// Everything an experiment produced; serialises deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub metrics: AggregateMetrics,
    pub runs: Vec<SeedRun>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation")
    }

    /// One row with `mean ± std` in percent.
    pub fn to_table(&self) -> String {
        let mut out = table_header("Loss");
        out.push_str(&self.table_row());
        out
    }

    pub fn table_row(&self) -> String {
        let mut cells: Vec<String> = self
            .metrics
            .summaries()
            .iter()
            .map(|s| format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std))
            .collect();
        cells.push(format!("{:.2}", self.metrics.avg_predicted_positives.mean));
        table_row(self.config.loss.kind.display_name(), &cells)
    }
}

/// Trains every seed in parallel; results keep the order of `config.seeds`.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| train(config, dataset, seed).map(|o| o.run))
        .collect::<Result<Vec<_>>>()?;
    let report = ExperimentReport {
        config: config.clone(),
        metrics: AggregateMetrics::from_runs(&runs),
        runs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    info!(
        "{}: F1 {:.3} over {} seeds in {:.1}s",
        config.loss,
        report.metrics.f1.mean,
        report.runs.len(),
        report.wall_clock_secs
    );
    Ok(report)
}

/// Loads the configured data, then runs every seed.
pub fn run_config(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let dataset = config.data.load()?;
    run_experiment(config, &dataset)
}

/// A τ × K grid of experiments sharing one base recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub ks: Vec<usize>,
    pub taus: Vec<f64>,
    /// `cells[t][k]` for `taus[t]` and `ks[k]`.
    pub cells: Vec<Vec<AggregateMetrics>>,
}

impl SweepReport {
    pub fn cell(&self, tau_index: usize, k_index: usize) -> &AggregateMetrics {
        &self.cells[tau_index][k_index]
    }

    /// Grid of one metric (index into [`METRIC_NAMES`]) in percent, τ rows by K columns.
    pub fn to_table(&self, metric: usize) -> String {
        let mut out = format!("{} (%)\n{:<8}", METRIC_NAMES[metric], "tau\\K");
        for k in &self.ks {
            out.push_str(&format!(" {k:>13}"));
        }
        out.push('\n');
        for (tau, row) in self.taus.iter().zip(&self.cells) {
            out.push_str(&format!("{tau:<8}"));
            for cell in row {
                let s = cell.summaries()[metric];
                let text = format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std);
                out.push_str(&format!(" {text:>13}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every (τ, K) pair on the same dataset.
pub fn sweep(
    base: &ExperimentConfig,
    dataset: &Dataset,
    ks: &[usize],
    taus: &[f64],
) -> Result<SweepReport> {
    if ks.is_empty() || taus.is_empty() {
        return Err(Error::config("sweep needs at least one K and one tau"));
    }
    let grid: Vec<(usize, usize)> =
        (0..taus.len()).flat_map(|t| (0..ks.len()).map(move |k| (t, k))).collect();
    let flat = grid
        .par_iter()
        .map(|&(t, k)| {
            let config = ExperimentConfig {
                k: ks[k],
                tau: taus[t],
                ..base.clone()
            };
            run_experiment(&config, dataset).map(|r| r.metrics)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = flat.into_iter();
    let cells = (0..taus.len())
        .map(|_| it.by_ref().take(ks.len()).collect())
        .collect();
    Ok(SweepReport {
        ks: ks.to_vec(),
        taus: taus.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[0.7]), Summary { mean: 0.7, std: 0.0 });
    }
}
