//! `train` fits one configured run end to end and records its artifacts.
//!
//! Adapter variants (lora, dora) write the frozen base weights, the trained
//! adapter + head, a loss history, and a metrics report. The two SVM
//! variants write the fitted pipeline and the metrics report. Evaluation is
//! always on the manifest's dev split; the test split is left untouched for
//! the final report stage.

use std::fs;

use clap::Args;
use log::info;
use peftkit_core::checkpoint::{save_adapter_only, save_encoder, save_svm};
use peftkit_core::classifier::{evaluate_subset, train_subset, ClassifierHead};
use peftkit_core::data::Split;
use peftkit_core::encoder::init_weights;
use peftkit_core::metrics::MetricsReport;
use peftkit_core::peft::attach_adapters;
use peftkit_core::{Error, Result};

use crate::config::{Overrides, RunConfig, Variant};
use crate::pipeline::{
    evaluate_svm, fit_svm_pipeline, frozen_embeddings, functional_matrix, logmel_samples,
    take_rows, task_label, write_history_csv, write_json, Corpus, RunMetrics,
};

/// Functional features keep at most this many principal directions.
const BASELINE_PCA_COMPONENTS: usize = 100;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    fs::create_dir_all(&cfg.out)?;
    let corpus = Corpus::load(&cfg.manifest, cfg.clip_seconds)?;
    let train_idx = corpus.split_indices(Split::Train);
    let dev_idx = corpus.split_indices(Split::Dev);
    if train_idx.is_empty() {
        return Err(Error::Data("manifest has no train split".into()));
    }
    if dev_idx.is_empty() {
        return Err(Error::Data("manifest has no dev split".into()));
    }
    info!(
        "training variant={} task={} on {} clips, scoring {}",
        cfg.variant.name(),
        cfg.task.name(),
        train_idx.len(),
        dev_idx.len()
    );
    let report = match cfg.variant {
        Variant::Lora | Variant::Dora => train_adapters(&cfg, &corpus, &train_idx, &dev_idx)?,
        Variant::FrozenSvm => train_embedding_svm(&cfg, &corpus, &train_idx, &dev_idx)?,
        Variant::BaselineSvm => train_baseline_svm(&cfg, &corpus, &train_idx, &dev_idx)?,
    };
    write_json(&cfg.out.join("metrics.json"), &RunMetrics::new(&cfg, &report))?;
    println!(
        "task={} variant={} accuracy={:.4} macro_f1={:.4}",
        cfg.task.name(),
        cfg.variant.name(),
        report.accuracy,
        report.macro_f1
    );
    Ok(())
}

fn train_adapters(
    cfg: &RunConfig,
    corpus: &Corpus,
    train_idx: &[usize],
    dev_idx: &[usize],
) -> Result<MetricsReport> {
    let samples = logmel_samples(corpus, cfg.task, cfg.encoder.n_mels)?;
    let base = init_weights(&cfg.encoder)?;
    save_encoder(&cfg.out.join("base.ckpt"), &base)?;
    let mut model = attach_adapters(base, &cfg.adapter, cfg.seed)?;
    let mut head = ClassifierHead::new(cfg.encoder.d_model, cfg.task.n_classes())?;
    let history = train_subset(&mut model, &mut head, &samples, train_idx, &cfg.train)?;
    write_history_csv(&cfg.out.join("history.csv"), &history)?;
    save_adapter_only(&cfg.out.join("adapter.ckpt"), &model, &head)?;
    evaluate_subset(&model, &head, &samples, dev_idx)
}

/// Frozen control: mean-pooled embeddings of the untouched encoder feed an
/// RBF SVM. No adapter parameters exist, so nothing is trained upstream.
fn train_embedding_svm(
    cfg: &RunConfig,
    corpus: &Corpus,
    train_idx: &[usize],
    dev_idx: &[usize],
) -> Result<MetricsReport> {
    let x = frozen_embeddings(corpus, &cfg.encoder)?;
    fit_and_score_svm(cfg, corpus, &x, train_idx, dev_idx, None)
}

/// Handcrafted baseline: 88 functionals, standardized, reduced, classified.
fn train_baseline_svm(
    cfg: &RunConfig,
    corpus: &Corpus,
    train_idx: &[usize],
    dev_idx: &[usize],
) -> Result<MetricsReport> {
    let x = functional_matrix(corpus)?;
    fit_and_score_svm(cfg, corpus, &x, train_idx, dev_idx, Some(BASELINE_PCA_COMPONENTS))
}

fn fit_and_score_svm(
    cfg: &RunConfig,
    corpus: &Corpus,
    x: &peftkit_core::Tensor,
    train_idx: &[usize],
    dev_idx: &[usize],
    pca_components: Option<usize>,
) -> Result<MetricsReport> {
    let labels: Vec<usize> = corpus
        .entries
        .iter()
        .map(|e| task_label(e, cfg.task))
        .collect();
    let n_classes = cfg.task.n_classes();
    let x_train = take_rows(x, train_idx)?;
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let pipeline = fit_svm_pipeline(&x_train, &y_train, n_classes, &cfg.svm, pca_components)?;
    save_svm(&cfg.out.join("svm.ckpt"), &pipeline)?;
    let x_dev = take_rows(x, dev_idx)?;
    let y_dev: Vec<usize> = dev_idx.iter().map(|&i| labels[i]).collect();
    evaluate_svm(&pipeline, &x_dev, &y_dev, n_classes)
}
