//! Run configuration: one JSON file plus flag overrides drives `train` and
//! `cv`. A single mandatory seed pins every random stream in the run; the
//! nested stage configs inherit it, so two runs with the same file and flags
//! produce byte-identical artifacts.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use peftkit_core::classifier::TrainConfig;
use peftkit_core::encoder::EncoderConfig;
use peftkit_core::peft::{AdapterConfig, AdapterVariant};
use peftkit_core::svm::SvmParams;
use peftkit_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Two classes: target condition present or absent.
    Detect,
    /// Four ordered severity classes.
    Severity,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Detect => 2,
            Task::Severity => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Detect => "detect",
            Task::Severity => "severity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Low-rank adapters on the attention projections.
    Lora,
    /// Low-rank adapters with decoupled column magnitudes.
    Dora,
    /// Frozen encoder, mean-pooled embeddings into an RBF SVM.
    FrozenSvm,
    /// Handcrafted functionals, z-score, PCA, RBF SVM.
    BaselineSvm,
}

impl Variant {
    /// The adapter flavor, when this variant trains adapters at all.
    pub fn adapter_variant(self) -> Option<AdapterVariant> {
        match self {
            Variant::Lora => Some(AdapterVariant::Lora),
            Variant::Dora => Some(AdapterVariant::Dora),
            Variant::FrozenSvm | Variant::BaselineSvm => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lora => "lora",
            Variant::Dora => "dora",
            Variant::FrozenSvm => "frozen-svm",
            Variant::BaselineSvm => "baseline-svm",
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_clip_seconds() -> f64 {
    3.0
}

fn default_folds() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub variant: Variant,
    /// Master seed. Mandatory: there is no wall-clock fallback.
    pub seed: u64,
    /// JSONL manifest; audio paths resolve relative to its directory.
    pub manifest: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Every clip is padded or truncated to this length before framing.
    #[serde(default = "default_clip_seconds")]
    pub clip_seconds: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub svm: SvmParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the master seed into every stage and aligns the adapter
    /// variant with the run variant.
    pub fn resolve(&mut self) {
        self.encoder.seed = self.seed;
        self.train.seed = self.seed;
        self.svm.seed = self.seed;
        if let Some(v) = self.variant.adapter_variant() {
            self.adapter.variant = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.svm.validate()?;
        if self.variant.adapter_variant().is_some() {
            self.adapter.validate(self.encoder.d_model, self.encoder.d_model)?;
        }
        if !self.clip_seconds.is_finite() || self.clip_seconds <= 0.0 {
            return Err(Error::Config(format!(
                "clip_seconds {} must be a positive duration",
                self.clip_seconds
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds {} is below the 2-fold minimum",
                self.folds
            )));
        }
        Ok(())
    }
}

/// Flags shared by `train` and `cv`; every one overrides the config file.
#[derive(clap::Args, Clone, Debug)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Classification task.
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Model variant.
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Adapter rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Learning rate; 0 freezes every trainable parameter.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(r) = self.rank {
            cfg.adapter.rank = r;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }
}
