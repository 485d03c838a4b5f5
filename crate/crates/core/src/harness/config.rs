use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::math::AdamConfig;
use crate::pseudo::Similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoMode {
    /// k-NN label frequencies in feature space.
    Instance,
    /// Class co-occurrence in the test annotations.
    ClassCooc,
    /// True label set minus the annotated label (needs `true_labels`).
    Ideal,
    None,
}

impl PseudoMode {
    pub fn name(self) -> &'static str {
        match self {
            PseudoMode::Instance => "instance",
            PseudoMode::ClassCooc => "class_cooc",
            PseudoMode::Ideal => "ideal",
            PseudoMode::None => "none",
        }
    }
}

impl std::str::FromStr for PseudoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "instance" => PseudoMode::Instance,
            "class_cooc" => PseudoMode::ClassCooc,
            "ideal" => PseudoMode::Ideal,
            "none" => PseudoMode::None,
            other => return Err(Error::config(format!("unknown pseudo mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    /// Every test metric from the checkpoint with the best validation top-1.
    #[default]
    BestCheckpoint,
    /// Each test metric maximised over epochs independently.
    BestPerMetric,
}

/// Where the train/val/test splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Manifest paths, relative to the config file when loaded from disk.
    Manifests {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
    },
    /// Generated in memory from the synthetic benchmark.
    Synthetic(SynthConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Manifests { train, val, test } => Dataset::load(train, val, test),
            DataSource::Synthetic(cfg) => crate::data::generate(cfg),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DataSource::Manifests { train, val, test } = self {
            for p in [train, val, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

fn default_k() -> usize {
    15
}
fn default_tau() -> f64 {
    0.1
}
fn default_cooc_threshold() -> f64 {
    0.5
}
fn default_batch_size() -> usize {
    64
}
fn default_lr() -> f64 {
    5e-6
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_hidden() -> usize {
    1024
}
fn default_patience() -> usize {
    20
}
fn default_max_epochs() -> usize {
    1000
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_pseudo_mode() -> PseudoMode {
    PseudoMode::Instance
}

/// One training recipe, applied to every seed.
///
/// Unset fields take the defaults of the original recipe: K = 15, τ = 0.1,
/// batch 64, Adam at lr 5e-6, hidden width 1024, patience 20.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub loss: LossSpec,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_pseudo_mode")]
    pub pseudo_mode: PseudoMode,
    #[serde(default)]
    pub similarity: Similarity,
    #[serde(default = "default_cooc_threshold")]
    pub cooc_threshold: f64,
    /// Recompute instance pseudo-labels from penultimate-layer features every
    /// this many epochs.
    #[serde(default)]
    pub refresh_epochs: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub report_mode: ReportMode,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, loss: LossSpec) -> Self {
        Self {
            data,
            loss,
            k: default_k(),
            tau: default_tau(),
            pseudo_mode: default_pseudo_mode(),
            similarity: Similarity::default(),
            cooc_threshold: default_cooc_threshold(),
            refresh_epochs: None,
            batch_size: default_batch_size(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            hidden: default_hidden(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            seeds: default_seeds(),
            report_mode: ReportMode::default(),
        }
    }

    /// Reads a JSON config; manifest paths are made relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            config.data.resolve(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.adam().validate()?;
        if self.loss.kind.uses_pseudo_labels() && self.pseudo_mode == PseudoMode::None {
            return Err(Error::config(format!(
                "loss {} needs pseudo-labels, but pseudo_mode is none",
                self.loss.kind.name()
            )));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.pseudo_mode == PseudoMode::Instance && self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if self.refresh_epochs == Some(0) {
            return Err(Error::config("refresh_epochs must be at least 1 when set"));
        }
        Ok(())
    }

    /// Same recipe with a different loss.
    pub fn with_loss(&self, loss: LossSpec) -> Self {
        Self {
            loss,
            ..self.clone()
        }
    }

    pub fn with_loss_kind(&self, kind: LossKind) -> Self {
        self.with_loss(LossSpec::new(kind))
    }
}
