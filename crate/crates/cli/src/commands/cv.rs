//! `cv` runs stratified k-fold cross-validation for an adapter variant.
//!
//! Train and dev splits are pooled, partitioned into k stratified folds,
//! and each fold is held out once. Per-fold metrics plus the winning fold
//! index land in folds.json; the winner's checkpoint is copied to
//! selected.ckpt. The test split never enters the pool.

use std::fs;

use clap::Args;
use log::info;
use peftkit_core::classifier::{cross_validate, CvSpec};
use peftkit_core::data::Split;
use peftkit_core::{Error, Result};
use serde::Serialize;

use crate::config::Overrides;
use crate::pipeline::{logmel_samples, write_json, Corpus};

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Serialize)]
struct FoldRecord {
    fold: usize,
    accuracy: f64,
    macro_f1: f64,
    per_class_f1: Vec<f64>,
    confusion: Vec<Vec<u64>>,
    checkpoint: String,
}

#[derive(Serialize)]
struct FoldsFile {
    folds: Vec<FoldRecord>,
    selected: usize,
}

pub fn run(args: &CvArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    if cfg.variant.adapter_variant().is_none() {
        return Err(Error::Config(format!(
            "cross-validation trains adapters; variant {} has none (use lora or dora)",
            cfg.variant.name()
        )));
    }
    fs::create_dir_all(&cfg.out)?;
    let corpus = Corpus::load(&cfg.manifest, cfg.clip_seconds)?;
    let pooled: Vec<usize> = (0..corpus.entries.len())
        .filter(|&i| corpus.entries[i].split != Split::Test)
        .collect();
    if pooled.is_empty() {
        return Err(Error::Data("manifest has no train or dev clips".into()));
    }
    let mut keep = vec![false; corpus.entries.len()];
    for &i in &pooled {
        keep[i] = true;
    }
    let samples: Vec<_> = logmel_samples(&corpus, cfg.task, cfg.encoder.n_mels)?
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| keep[i].then_some(s))
        .collect();
    let ids: Vec<String> = pooled
        .iter()
        .map(|&i| corpus.entries[i].id.clone())
        .collect();
    info!(
        "cross-validating {} folds over {} pooled clips",
        cfg.folds,
        ids.len()
    );
    let spec = CvSpec {
        k: cfg.folds,
        n_classes: cfg.task.n_classes(),
        encoder: cfg.encoder.clone(),
        adapter: cfg.adapter.clone(),
        train: cfg.train.clone(),
    };
    let result = cross_validate(&samples, &ids, &spec, &cfg.out)?;
    let folds: Vec<FoldRecord> = result
        .folds
        .iter()
        .map(|f| FoldRecord {
            fold: f.fold,
            accuracy: f.report.accuracy,
            macro_f1: f.report.macro_f1,
            per_class_f1: f.report.per_class_f1.clone(),
            confusion: f.report.confusion.clone(),
            checkpoint: f
                .checkpoint
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        })
        .collect();
    for f in &folds {
        println!(
            "fold={} accuracy={:.4} macro_f1={:.4}",
            f.fold, f.accuracy, f.macro_f1
        );
    }
    println!(
        "selected={} macro_f1={:.4}",
        result.selected, result.folds[result.selected].report.macro_f1
    );
    write_json(
        &cfg.out.join("folds.json"),
        &FoldsFile {
            folds,
            selected: result.selected,
        },
    )
}
