//! Shared plumbing between commands: manifest loading, clip conditioning,
//! feature extraction, SVM pipeline fitting, and artifact writers.

use std::path::Path;

use peftkit_core::classifier::TrainSample;
use peftkit_core::data::{load_corpus, ManifestEntry, Split};
use peftkit_core::encoder::{encoder_forward, init_weights, EncoderConfig};
use peftkit_core::features::{
    functional_features, pad_or_truncate, pca_fit, pca_transform, resample_to_16k, AudioClip,
    LogMelExtractor, Standardizer,
};
use peftkit_core::metrics::{ConfusionMatrix, MetricsReport};
use peftkit_core::svm::{MulticlassSvm, SvmParams, SvmPipeline};
use peftkit_core::{Error, Result, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Task};

/// Manifest entries and their clips, already resampled to 16 kHz and cut to
/// a common length. Order matches the manifest.
pub struct Corpus {
    pub entries: Vec<ManifestEntry>,
    pub clips: Vec<AudioClip>,
}

impl Corpus {
    pub fn load(manifest: &Path, clip_seconds: f64) -> Result<Self> {
        let pairs = load_corpus(manifest)?;
        let entries: Vec<ManifestEntry> = pairs.iter().map(|(e, _)| e.clone()).collect();
        let clips: Vec<AudioClip> = pairs
            .par_iter()
            .map(|(entry, clip)| {
                resample_to_16k(clip)
                    .and_then(|c| pad_or_truncate(&c, clip_seconds))
                    .map_err(|e| Error::Data(format!("{}: {e}", entry.path)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries, clips })
    }

    /// Indices belonging to one manifest split, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

}

/// The label a task trains on: collapsed presence/absence for detection,
/// the raw class id for severity.
pub fn task_label(entry: &ManifestEntry, task: Task) -> usize {
    match task {
        Task::Detect => entry.detection_label(),
        Task::Severity => entry.label,
    }
}

/// Log-Mel features for every clip, labeled for `task`.
pub fn logmel_samples(corpus: &Corpus, task: Task, n_mels: usize) -> Result<Vec<TrainSample>> {
    let extractor = LogMelExtractor::new(n_mels)?;
    corpus
        .clips
        .par_iter()
        .zip(&corpus.entries)
        .map(|(clip, entry)| {
            let lm = extractor
                .compute(clip)
                .map_err(|e| Error::Data(format!("{}: {e}", entry.path)))?;
            Ok(TrainSample { features: lm.frames, label: task_label(entry, task) })
        })
        .collect()
}

/// Stacks per-clip rows into one n x d matrix.
fn stack_rows(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    Tensor::new(&[n, d], rows.into_iter().flatten().collect())
}

/// Mean-pooled hidden states of the frozen, freshly initialized encoder:
/// one d_model row per clip.
pub fn frozen_embeddings(
    corpus: &Corpus,
    cfg: &EncoderConfig,
) -> Result<Tensor> {
    let weights = init_weights(cfg)?;
    let extractor = LogMelExtractor::new(cfg.n_mels)?;
    let rows: Vec<Vec<f64>> = corpus
        .clips
        .par_iter()
        .zip(&corpus.entries)
        .map(|(clip, entry)| {
            let lm = extractor.compute(clip)?;
            let hidden = encoder_forward(&weights, &lm.frames)
                .map_err(|e| Error::Data(format!("{}: {e}", entry.path)))?;
            let (t, d) = (hidden.rows(), hidden.cols());
            let mut pooled = vec![0.0; d];
            for i in 0..t {
                for (j, v) in hidden.row(i).iter().enumerate() {
                    pooled[j] += v;
                }
            }
            for v in &mut pooled {
                *v /= t as f64;
            }
            Ok(pooled)
        })
        .collect::<Result<_>>()?;
    stack_rows(rows)
}

/// The 88-dimensional functional feature matrix, one row per clip.
pub fn functional_matrix(corpus: &Corpus) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = corpus
        .clips
        .par_iter()
        .zip(&corpus.entries)
        .map(|(clip, entry)| {
            let v = functional_features(clip)
                .map_err(|e| Error::Data(format!("{}: {e}", entry.path)))?;
            Ok::<_, Error>(v.data().to_vec())
        })
        .collect::<Result<_>>()?;
    stack_rows(rows)
}

/// Selects the rows of `x` named by `indices`.
pub fn take_rows(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let d = x.cols();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(&[indices.len(), d], data)
}

/// Fits standardize (+ optional PCA) + one-vs-rest SVM on training rows.
pub fn fit_svm_pipeline(
    x_train: &Tensor,
    labels: &[usize],
    n_classes: usize,
    params: &SvmParams,
    pca_components: Option<usize>,
) -> Result<SvmPipeline> {
    let standardizer = Standardizer::fit(x_train)?;
    let xs = standardizer.transform(x_train)?;
    let (pca, reduced) = match pca_components {
        Some(q) => {
            let model = pca_fit(&xs, q)?;
            let t = pca_transform(&model, &xs)?;
            (Some(model), t)
        }
        None => (None, xs),
    };
    let svm = MulticlassSvm::train(&reduced, labels, n_classes, params)?;
    Ok(SvmPipeline { standardizer, pca, svm })
}

/// Scores a fitted pipeline row by row.
pub fn evaluate_svm(
    pipeline: &SvmPipeline,
    x: &Tensor,
    labels: &[usize],
    n_classes: usize,
) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(labels.len());
    for i in 0..x.rows() {
        let row = Tensor::new(&[x.cols()], x.row(i).to_vec())?;
        preds.push(pipeline.predict(&row)?);
    }
    let m = ConfusionMatrix::from_pairs(&preds, labels, n_classes)?;
    MetricsReport::from_confusion(&m)
}

/// What one run writes to metrics.json; `report` consumes these files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub task: String,
    pub variant: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl RunMetrics {
    pub fn new(cfg: &RunConfig, report: &MetricsReport) -> Self {
        Self {
            task: cfg.task.name().to_string(),
            variant: cfg.variant.name().to_string(),
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            per_class_f1: report.per_class_f1.clone(),
            confusion: report.confusion.clone(),
        }
    }
}

/// Pretty JSON with a trailing newline; stable for byte-for-byte re-runs.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_history_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
