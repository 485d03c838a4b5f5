use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PseudoMode, ReportMode};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{self, LossInput};
use crate::math::{AdamState, DenseMatrix, RandomSource};
use crate::metrics::{EvalSet, MetricsReport, PredictionMatrix};
use crate::model::{self, MlpDims, MlpParams};
use crate::pseudo::{self, CooccurrenceTable, NeighborIndex, PseudoLabelSet};

/// Pseudo-label sets for the training split under `config.pseudo_mode`.
///
/// `features` overrides the training features used for neighbour search.
pub fn pseudo_labels_for(
    config: &ExperimentConfig,
    dataset: &Dataset,
    features: Option<&DenseMatrix>,
) -> Result<Option<Vec<PseudoLabelSet>>> {
    let train = &dataset.train;
    let labels = train.manifest.single_labels();
    let sets = match config.pseudo_mode {
        PseudoMode::None => return Ok(None),
        PseudoMode::Instance => {
            if config.k >= train.len() {
                return Err(Error::config(format!(
                    "k = {} needs more than {} training instances",
                    config.k,
                    train.len()
                )));
            }
            let index =
                NeighborIndex::build(features.unwrap_or(&train.features), config.similarity)?;
            pseudo::instance_pseudo_labels(&index, &labels, config.k, config.tau)?
        }
        PseudoMode::ClassCooc => {
            let table = CooccurrenceTable::from_label_sets(
                &dataset.test.manifest.label_sets(),
                dataset.num_classes(),
            )?;
            let per_class = pseudo::class_pseudo_labels(&table, config.cooc_threshold);
            pseudo::assign_class_pseudo_labels(&per_class, &labels)?
        }
        PseudoMode::Ideal => {
            let truth = train.manifest.true_label_sets().ok_or_else(|| {
                Error::config("ideal pseudo-labels need true_labels on every training record")
            })?;
            pseudo::ideal_pseudo_labels(&truth, &labels)?
        }
    };
    Ok(Some(sets))
}

/// Standard single-label top-1 accuracy; argmax ties go to the lower class.
pub fn single_label_accuracy(params: &MlpParams, split: &Split) -> Result<f64> {
    let conf = model::predict(params, &split.features)?;
    let labels = split.manifest.single_labels();
    let hits = conf
        .iter_rows()
        .zip(&labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best == y
        })
        .count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// The five metrics of `params` on a multi-label test split.
pub fn evaluate(params: &MlpParams, test: &Split) -> Result<MetricsReport> {
    if params.dims().input != test.dim() || params.dims().classes != test.num_classes() {
        return Err(Error::shape(format!(
            "model expects D={}, C={}; test split has D={}, C={}",
            params.dims().input,
            params.dims().classes,
            test.dim(),
            test.num_classes()
        )));
    }
    let preds = PredictionMatrix::new(model::predict(params, &test.features)?)?;
    let gt = EvalSet::new(test.num_classes(), test.manifest.label_sets())?;
    MetricsReport::compute(&preds, &gt)
}

/// Outcome of training one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Epoch (0-based) of the selected checkpoint; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub epochs_trained: usize,
    pub val_top1_trace: Vec<f64>,
    pub train_loss_trace: Vec<f64>,
    /// Mean pseudo-label set size at the start of training.
    pub mean_pseudo_labels: Option<f64>,
    pub test: MetricsReport,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

pub struct TrainOutcome {
    pub params: MlpParams,
    pub run: SeedRun,
}

fn mean_set_size(sets: &[PseudoLabelSet]) -> f64 {
    sets.iter().map(PseudoLabelSet::len).sum::<usize>() as f64 / sets.len().max(1) as f64
}

/// Trains one model with early stopping on validation top-1 accuracy.
///
/// Parameters come from `seed`'s stream 0 and per-epoch shuffling from
/// stream 1, so baselines are unaffected by the pseudo-label mode.
pub fn train(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let root = RandomSource::new(seed);
    let dims = MlpDims::new(dataset.dim(), config.hidden, dataset.num_classes())?;
    let mut params = MlpParams::init(&mut root.fork(0), dims);
    let mut shuffle_rng = root.fork(1);
    let mut adam = AdamState::new(dims.num_params(), config.adam());

    let uses_pseudo = config.loss.kind.uses_pseudo_labels();
    let pseudo_sets = if uses_pseudo {
        pseudo_labels_for(config, dataset, None)?
    } else {
        None
    };
    let mean_pseudo_labels = pseudo_sets.as_deref().map(mean_set_size);
    let mut pseudo_lists = pseudo_sets.as_deref().map(pseudo::label_lists);

    let train_split = &dataset.train;
    let labels = train_split.manifest.single_labels();
    let n = train_split.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut best_params = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut best_per_metric: Option<MetricsReport> = None;
    let mut since_best = 0;
    let mut val_trace = Vec::new();
    let mut loss_trace = Vec::new();

    for epoch in 0..config.max_epochs {
        if let Some(every) = config.refresh_epochs {
            if uses_pseudo
                && config.pseudo_mode == PseudoMode::Instance
                && epoch > 0
                && epoch % every == 0
            {
                let hidden = model::forward(&params, &train_split.features)?.hidden2;
                match pseudo_labels_for(config, dataset, Some(&hidden)) {
                    Ok(sets) => pseudo_lists = sets.as_deref().map(pseudo::label_lists),
                    Err(Error::Domain(msg)) => {
                        warn!("epoch {epoch}: keeping previous pseudo-labels ({msg})");
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train_split.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let cache = model::forward(&params, &x)?;
            let batch_pseudo: Option<Vec<Vec<usize>>> = pseudo_lists
                .as_ref()
                .map(|lists| batch.iter().map(|&i| lists[i].clone()).collect());
            let mut input = LossInput::new(&cache.confidences, &y);
            if let Some(p) = batch_pseudo.as_deref() {
                input = input.with_pseudo(p);
            }
            let out = losses::compute(&config.loss, &input)?;
            if !out.value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += out.value * batch.len() as f64;
            let grads = model::backward(&cache, &params, &out.grad)?;
            adam.step_segments(&mut params.zip_with_grads(&grads))?;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters at epoch {epoch}")));
        }
        loss_trace.push(epoch_loss / n as f64);

        let acc = single_label_accuracy(&params, &dataset.val)?;
        val_trace.push(acc);
        debug!("seed {seed} epoch {epoch}: loss {:.6} val top-1 {acc:.4}", epoch_loss / n as f64);

        if config.report_mode == ReportMode::BestPerMetric {
            let report = evaluate(&params, &dataset.test)?;
            best_per_metric = Some(match best_per_metric {
                None => report,
                Some(best) => MetricsReport {
                    top_set_ml: best.top_set_ml.max(report.top_set_ml),
                    top1_ml: best.top1_ml.max(report.top1_ml),
                    iou_acc: best.iou_acc.max(report.iou_acc),
                    f1: best.f1.max(report.f1),
                    map: best.map.max(report.map),
                    ..best
                },
            });
        }

        if acc > best_acc {
            best_acc = acc;
            best_epoch = Some(epoch);
            best_params.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let mut test = evaluate(&best_params, &dataset.test)?;
    if let Some(best) = best_per_metric {
        test = MetricsReport {
            avg_predicted_positives: test.avg_predicted_positives,
            per_class_ap: test.per_class_ap,
            ..best
        };
    }
    let run = SeedRun {
        seed,
        best_epoch,
        epochs_trained: val_trace.len(),
        val_top1_trace: val_trace,
        train_loss_trace: loss_trace,
        mean_pseudo_labels,
        test,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        params: best_params,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Ambiguity, SynthConfig};
    use crate::harness::config::DataSource;
    use crate::losses::{LossKind, LossSpec};

    fn toy() -> (ExperimentConfig, Dataset) {
        let synth = SynthConfig {
            base_classes: 3,
            train_per_class: 12,
            val_per_class: 4,
            test_per_class: 4,
            dim: 6,
            cluster_std: 0.5,
            center_scale: 2.0,
            ambiguity: Ambiguity::ConfusingSplit,
            seed: 1,
        };
        let data = generate(&synth).unwrap();
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic(synth), LossSpec::new(LossKind::An));
        cfg.hidden = 8;
        cfg.lr = 1e-2;
        cfg.max_epochs = 15;
        cfg.k = 5;
        (cfg, data)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (mut cfg, data) = toy();
        cfg.max_epochs = 0;
        let out = train(&cfg, &data, 3).unwrap();
        let init = MlpParams::init(
            &mut RandomSource::new(3).fork(0),
            MlpDims::new(6, 8, 6).unwrap(),
        );
        assert_eq!(out.params, init);
        assert!(out.run.val_top1_trace.is_empty());
        assert_eq!(out.run.best_epoch, None);
    }

    #[test]
    fn best_checkpoint_matches_trace_max() {
        let (cfg, data) = toy();
        let out = train(&cfg, &data, 0).unwrap();
        let trace = &out.run.val_top1_trace;
        let max = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(single_label_accuracy(&out.params, &data.val).unwrap(), max);
        assert!(out.run.best_epoch.unwrap() < out.run.epochs_trained);
    }

    #[test]
    fn baselines_ignore_pseudo_mode() {
        let (mut cfg, data) = toy();
        cfg.pseudo_mode = PseudoMode::None;
        let a = train(&cfg, &data, 2).unwrap();
        cfg.pseudo_mode = PseudoMode::Instance;
        let b = train(&cfg, &data, 2).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn pseudo_modes_on_twins() {
        let (mut cfg, data) = toy();
        cfg.pseudo_mode = PseudoMode::Ideal;
        let sets = pseudo_labels_for(&cfg, &data, None).unwrap().unwrap();
        for (set, y) in sets.iter().zip(data.train.manifest.single_labels()) {
            assert_eq!(set.labels, vec![y ^ 1]);
        }
        cfg.pseudo_mode = PseudoMode::ClassCooc;
        let sets = pseudo_labels_for(&cfg, &data, None).unwrap().unwrap();
        for (set, y) in sets.iter().zip(data.train.manifest.single_labels()) {
            assert_eq!(set.labels, vec![y ^ 1]);
        }
        cfg.k = data.train.len();
        cfg.pseudo_mode = PseudoMode::Instance;
        assert!(pseudo_labels_for(&cfg, &data, None).is_err());
    }

    #[test]
    fn refresh_hook_runs() {
        let (mut cfg, data) = toy();
        cfg.loss = LossSpec::new(LossKind::Ps);
        cfg.refresh_epochs = Some(5);
        let a = train(&cfg, &data, 4).unwrap();
        let b = train(&cfg, &data, 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.run.val_top1_trace, b.run.val_top1_trace);
    }
}
