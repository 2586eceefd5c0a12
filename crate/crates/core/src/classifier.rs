//! Classification head, Adam, the adapter training loop, and k-fold
//! cross-validation with macro-F1 model selection.
//!
//! Training touches only the adapter tensors and the head; the base encoder
//! is never handed to the optimizer, so frozen weights stay byte-identical
//! across any number of steps.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::stratified_folds;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::ndgrad::{NodeId, Tape, Tensor};
use crate::peft::{attach_adapters, AdapterConfig, AdaptedModel};

/// Mean-pool head: logits = mean_t(hidden) . W + b.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    /// d_model x C.
    pub w: Tensor,
    /// Length C.
    pub b: Tensor,
}

impl ClassifierHead {
    /// Zero init: step-0 logits are exactly zero, so the initial loss on any
    /// example is exactly ln C.
    pub fn new(d_model: usize, n_classes: usize) -> Result<Self> {
        if d_model == 0 || n_classes < 2 {
            return Err(Error::Config(format!(
                "head needs d_model >= 1 and at least 2 classes, got {d_model}x{n_classes}"
            )));
        }
        Ok(Self {
            w: Tensor::zeros(&[d_model, n_classes]),
            b: Tensor::zeros(&[n_classes]),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.b.len()
    }
}

/// Tape form of the head: mean over frames, then the affine map.
pub fn head_logits_nodes(
    tape: &mut Tape,
    hidden: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let pooled = tape.mean_rows(hidden)?;
    let scores = tape.matmul(pooled, w)?;
    tape.add_row(scores, b)
}

/// Mean-pools a T x d hidden state and applies the head; returns length-C
/// logits. A zero-row hidden state cannot be constructed, so the empty-input
/// case is rejected upstream by tensor validation.
pub fn pool_and_classify(hidden: &Tensor, head: &ClassifierHead) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let w = tape.constant(head.w.clone());
    let b = tape.constant(head.b.clone());
    let logits = head_logits_nodes(&mut tape, h, w, b)?;
    let row = tape.value(logits);
    Tensor::new(&[head.n_classes()], row.data().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 8e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let v = m.clone();
        Self { m, v }
    }
}

/// One bias-corrected Adam update over a parameter set. `t` is the 1-based
/// step index shared by every tensor in the set.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t < 1 {
        return Err(Error::Config("Adam step index starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params vs {} grads vs {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::Shape(format!(
                "param {:?} vs grad {:?}",
                params[i].shape(),
                grads[i].shape()
            )));
        }
        let p = params[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let g = grads[i].data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// 0 is allowed and gives a frozen control run: moments still update but
    /// no parameter moves.
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 8e-5, epochs: 30, batch_size: 8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

/// One labeled training example: log-Mel frames plus class id.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub features: Tensor,
    pub label: usize,
}

/// Builds one example's loss on a fresh tape and returns (loss node, param
/// nodes in optimizer order: adapters, then head W, then head b).
fn example_loss(
    tape: &mut Tape,
    model: &AdaptedModel,
    head: &ClassifierHead,
    sample: &TrainSample,
) -> Result<(NodeId, Vec<NodeId>)> {
    let (hidden, mut params) = model.forward_nodes(tape, &sample.features)?;
    let w = tape.param(head.w.clone());
    let b = tape.param(head.b.clone());
    params.push(w);
    params.push(b);
    let logits = head_logits_nodes(tape, hidden, w, b)?;
    let loss = tape.cross_entropy(logits, sample.label)?;
    Ok((loss, params))
}

/// Mean cross-entropy of the current model over `samples`, no updates.
pub fn mean_loss(
    model: &AdaptedModel,
    head: &ClassifierHead,
    samples: &[TrainSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no examples to score".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let (loss, _) = example_loss(&mut tape, model, head, s)?;
        sum += tape.value(loss).data()[0];
    }
    Ok(sum / samples.len() as f64)
}

/// Mini-batch Adam over the adapter and head parameters. Returns the mean
/// training loss per epoch. Deterministic per config seed.
pub fn train(
    model: &mut AdaptedModel,
    head: &mut ClassifierHead,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..samples.len()).collect();
    train_subset(model, head, samples, &all, cfg)
}

/// [`train`] restricted to `indices`; lets cross-validation share one
/// feature set across folds without cloning it.
pub fn train_subset(
    model: &mut AdaptedModel,
    head: &mut ClassifierHead,
    samples: &[TrainSample],
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let n_classes = head.n_classes();
    for &i in indices {
        if samples[i].label >= n_classes {
            return Err(Error::Label(format!(
                "label {} >= {n_classes} classes (example {i})",
                samples[i].label
            )));
        }
    }
    let mut state = AdamState::zeros_like(
        model
            .trainable_params()
            .into_iter()
            .chain([&head.w, &head.b]),
    );
    let adam_cfg = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = indices.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc: Vec<Tensor> = model
                .trainable_params()
                .into_iter()
                .chain([&head.w, &head.b])
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            for &i in batch {
                let mut tape = Tape::new();
                let (loss, param_ids) = example_loss(&mut tape, model, head, &samples[i])?;
                let loss_val = tape.value(loss).data()[0];
                if !loss_val.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became non-finite at epoch {epoch} (example {i})"
                    )));
                }
                epoch_loss += loss_val;
                let mut grads = tape.backward(loss)?;
                for (acc, id) in grad_acc.iter_mut().zip(&param_ids) {
                    if let Some(g) = grads.take(*id) {
                        acc.axpy(1.0, &g)?;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grad_acc {
                g.scale_in_place(inv);
            }
            t += 1;
            let mut params = model.trainable_params_mut();
            params.push(&mut head.w);
            params.push(&mut head.b);
            adam_step(&mut params, &grad_acc, &mut state, &adam_cfg, t)?;
        }
        history.push(epoch_loss / order.len() as f64);
    }
    Ok(history)
}

/// First index of the largest value; ties go to the lower class id.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict(
    model: &AdaptedModel,
    head: &ClassifierHead,
    features: &Tensor,
) -> Result<usize> {
    let hidden = model.forward(features)?;
    let logits = pool_and_classify(&hidden, head)?;
    Ok(argmax(logits.data()))
}

pub fn evaluate(
    model: &AdaptedModel,
    head: &ClassifierHead,
    samples: &[TrainSample],
) -> Result<MetricsReport> {
    let all: Vec<usize> = (0..samples.len()).collect();
    evaluate_subset(model, head, samples, &all)
}

pub fn evaluate_subset(
    model: &AdaptedModel,
    head: &ClassifierHead,
    samples: &[TrainSample],
    indices: &[usize],
) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        preds.push(predict(model, head, &samples[i].features)?);
        labels.push(samples[i].label);
    }
    let m = ConfusionMatrix::from_pairs(&preds, &labels, head.n_classes())?;
    MetricsReport::from_confusion(&m)
}

/// Everything one cross-validation run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub k: usize,
    pub n_classes: usize,
    pub encoder: EncoderConfig,
    pub adapter: AdapterConfig,
    pub train: TrainConfig,
}

/// Outcome of one held-out fold.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub report: MetricsReport,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    /// Winning fold index under the macro-F1 rule.
    pub selected: usize,
    pub selected_checkpoint: PathBuf,
}

/// Index of the highest score; ties resolve to the lowest fold index.
pub fn select_best(macro_f1: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in macro_f1.iter().enumerate() {
        match best {
            Some(b) if macro_f1[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Stratified k-fold cross-validation over a pooled sample set. Every fold
/// trains a fresh model (identical init across folds) on the other k-1
/// folds, is scored on its own fold, and is checkpointed; the fold with the
/// highest validation macro-F1 is copied to `selected.ckpt`. Folds run in
/// parallel on the current rayon pool and are joined by fold index, so
/// results do not depend on scheduling.
pub fn cross_validate(
    samples: &[TrainSample],
    ids: &[String],
    spec: &CvSpec,
    out_dir: &Path,
) -> Result<CvResult> {
    if samples.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{} samples vs {} ids",
            samples.len(),
            ids.len()
        )));
    }
    if spec.k < 2 {
        return Err(Error::Config(format!("k = {} folds, need at least 2", spec.k)));
    }
    spec.train.validate()?;
    let keys: Vec<(String, usize)> = ids
        .iter()
        .cloned()
        .zip(samples.iter().map(|s| s.label))
        .collect();
    let folds = stratified_folds(&keys, spec.k, spec.train.seed)?;
    std::fs::create_dir_all(out_dir)?;

    let mut results: Vec<FoldResult> = (0..spec.k)
        .into_par_iter()
        .map(|f| -> Result<FoldResult> {
            let val_idx = &folds[f];
            let train_idx: Vec<usize> = (0..spec.k)
                .filter(|&other| other != f)
                .flat_map(|other| folds[other].iter().copied())
                .collect();
            let base = crate::encoder::init_weights(&spec.encoder)?;
            let mut model = attach_adapters(base, &spec.adapter, spec.train.seed)?;
            let mut head = ClassifierHead::new(spec.encoder.d_model, spec.n_classes)?;
            let fold_cfg = TrainConfig {
                seed: spec.train.seed + f as u64,
                ..spec.train.clone()
            };
            train_subset(&mut model, &mut head, samples, &train_idx, &fold_cfg)?;
            let report = evaluate_subset(&model, &head, samples, val_idx)?;
            let path = out_dir.join(format!("fold{f}.ckpt"));
            checkpoint::save_adapted(&path, &model, &head)?;
            Ok(FoldResult { fold: f, report, checkpoint: path })
        })
        .collect::<Result<_>>()?;
    results.sort_by_key(|r| r.fold);

    let scores: Vec<f64> = results.iter().map(|r| r.report.macro_f1).collect();
    let selected = select_best(&scores).expect("k >= 2 folds");
    let selected_path = out_dir.join("selected.ckpt");
    std::fs::copy(&results[selected].checkpoint, &selected_path)?;
    Ok(CvResult {
        folds: results,
        selected,
        selected_checkpoint: selected_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_weights;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            n_mels: 5,
            max_frames: 8,
            seed: 17,
        }
    }

    fn tiny_model(variant_seed: u64) -> AdaptedModel {
        let base = init_weights(&tiny_encoder()).unwrap();
        let cfg = AdapterConfig { rank: 2, ..AdapterConfig::default() };
        attach_adapters(base, &cfg, variant_seed).unwrap()
    }

    /// Two linearly separable classes: constant-offset feature patterns
    /// with a small deterministic per-example wobble.
    fn toy_samples(n_per_class: usize) -> (Vec<TrainSample>, Vec<String>) {
        let mut samples = Vec::new();
        let mut ids = Vec::new();
        for c in 0..2usize {
            for i in 0..n_per_class {
                let offset = if c == 0 { 0.4 } else { -0.4 };
                let wobble = 0.01 * (i as f64 + 1.0);
                let f = Tensor::from_fn(&[3, 5], |j| {
                    offset + wobble * ((j % 3) as f64 - 1.0)
                });
                samples.push(TrainSample { features: f, label: c });
                ids.push(format!("clip{c}{i:02}"));
            }
        }
        (samples, ids)
    }

    #[test]
    fn pooling_a_single_frame_is_the_identity() {
        let hidden = Tensor::new(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let mut head = ClassifierHead::new(3, 2).unwrap();
        head.w = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let logits = pool_and_classify(&hidden, &head).unwrap();
        assert_eq!(logits.data(), &[0.5 + 2.0, -1.0 + 2.0]);
    }

    #[test]
    fn opposite_frames_cancel_to_the_bias() {
        let hidden = Tensor::new(&[2, 3], vec![0.7, -2.0, 1.5, -0.7, 2.0, -1.5]).unwrap();
        let mut head = ClassifierHead::new(3, 2).unwrap();
        head.w = Tensor::from_fn(&[3, 2], |i| i as f64 - 2.5);
        head.b = Tensor::new(&[2], vec![0.5, -0.25]).unwrap();
        let logits = pool_and_classify(&hidden, &head).unwrap();
        assert_eq!(logits.data(), head.b.data());
    }

    #[test]
    fn pooled_logits_match_a_hand_oracle() {
        let hidden = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
        let mut head = ClassifierHead::new(4, 2).unwrap();
        head.w = Tensor::from_fn(&[4, 2], |i| 0.1 * i as f64 - 0.3);
        head.b = Tensor::new(&[2], vec![0.05, -0.1]).unwrap();
        let logits = pool_and_classify(&hidden, &head).unwrap();
        for c in 0..2 {
            let mut want = head.b.data()[c];
            for j in 0..4 {
                let mean = (hidden.at(0, j) + hidden.at(1, j) + hidden.at(2, j)) / 3.0;
                want += mean * head.w.at(j, c);
            }
            assert!((logits.data()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_is_linear_on_exactly_representable_inputs() {
        // Integer-valued frames with power-of-two coefficients keep every
        // intermediate exact, so linearity can be checked with equality.
        let h1 = Tensor::from_fn(&[4, 3], |i| ((i * 7) % 9) as f64 - 4.0);
        let h2 = Tensor::from_fn(&[4, 3], |i| ((i * 5) % 11) as f64 - 5.0);
        let head = {
            let mut head = ClassifierHead::new(3, 2).unwrap();
            head.w = Tensor::from_fn(&[3, 2], |i| (i % 3) as f64 - 1.0);
            head
        };
        let combo = h1
            .zip_map(&h2, |a, b| 2.0 * a + 0.5 * b)
            .unwrap();
        let lhs = pool_and_classify(&combo, &head).unwrap();
        let p1 = pool_and_classify(&h1, &head).unwrap();
        let p2 = pool_and_classify(&h2, &head).unwrap();
        let rhs = p1
            .zip_map(&p2, |a, b| 2.0 * a + 0.5 * b)
            .unwrap();
        assert_eq!(lhs.data(), rhs.data());
    }

    #[test]
    fn adam_with_zero_gradients_and_zero_state_is_a_no_op() {
        let mut p = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let before = p.clone();
        let g = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::zeros_like([&p]);
        let mut params = vec![&mut p];
        adam_step(&mut params, &g, &mut state, &AdamConfig::default(), 1).unwrap();
        assert!(p.bits_eq(&before));
    }

    #[test]
    fn first_adam_step_moves_by_about_the_learning_rate() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        for g0 in [0.5, -3.0, 1e-3] {
            let mut p = Tensor::scalar(1.0);
            let g = vec![Tensor::scalar(g0)];
            let mut state = AdamState::zeros_like([&p]);
            let mut params = vec![&mut p];
            adam_step(&mut params, &g, &mut state, &cfg, 1).unwrap();
            let step = 1.0 - p.data()[0];
            // After bias correction the first update is lr * sign(g).
            assert!(
                (step - 0.1 * g0.signum()).abs() < 1e-6,
                "g = {g0}, step = {step}"
            );
        }
    }

    #[test]
    fn adam_drives_a_quadratic_toward_zero() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut theta = Tensor::scalar(1.0);
        let mut state = AdamState::zeros_like([&theta]);
        for t in 1..=200 {
            let g = vec![Tensor::scalar(2.0 * theta.data()[0])];
            let mut params = vec![&mut theta];
            adam_step(&mut params, &g, &mut state, &cfg, t).unwrap();
        }
        assert!(theta.data()[0].abs() < 0.05, "theta = {}", theta.data()[0]);
    }

    #[test]
    fn adam_rejects_step_zero_and_mismatched_shapes() {
        let mut p = Tensor::scalar(1.0);
        let g = vec![Tensor::scalar(0.5)];
        let mut state = AdamState::zeros_like([&p]);
        {
            let mut params = vec![&mut p];
            assert!(matches!(
                adam_step(&mut params, &g, &mut state, &AdamConfig::default(), 0),
                Err(Error::Config(_))
            ));
        }
        let bad = vec![Tensor::zeros(&[2])];
        let mut params = vec![&mut p];
        assert!(matches!(
            adam_step(&mut params, &bad, &mut state, &AdamConfig::default(), 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn adam_treats_parameters_independently() {
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let (mut a1, mut b1) = (Tensor::scalar(1.0), Tensor::scalar(-1.0));
        let grads = [Tensor::scalar(0.3), Tensor::scalar(-0.7)];
        let mut joint = AdamState::zeros_like([&a1, &b1]);
        {
            let mut params = vec![&mut a1, &mut b1];
            adam_step(&mut params, &grads, &mut joint, &cfg, 1).unwrap();
        }
        let (mut a2, mut b2) = (Tensor::scalar(1.0), Tensor::scalar(-1.0));
        for (p, g) in [(&mut a2, &grads[0]), (&mut b2, &grads[1])] {
            let mut solo = AdamState::zeros_like([&*p]);
            let mut params = vec![p];
            adam_step(&mut params, std::slice::from_ref(g), &mut solo, &cfg, 1).unwrap();
        }
        assert!(a1.bits_eq(&a2) && b1.bits_eq(&b2));
    }

    #[test]
    fn initial_loss_is_ln_c_with_the_zero_head() {
        let model = tiny_model(1);
        let head = ClassifierHead::new(8, 2).unwrap();
        let (samples, _) = toy_samples(3);
        let loss = mean_loss(&model, &head, &samples).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (samples, _) = toy_samples(6);
        let cfg = TrainConfig {
            learning_rate: 0.02,
            epochs: 8,
            batch_size: 4,
            seed: 5,
        };
        let mut model = tiny_model(2);
        let mut head = ClassifierHead::new(8, 2).unwrap();
        let h1 = train(&mut model, &mut head, &samples, &cfg).unwrap();
        assert!(h1.last().unwrap() < &h1[0], "history {h1:?}");

        let mut model2 = tiny_model(2);
        let mut head2 = ClassifierHead::new(8, 2).unwrap();
        let h2 = train(&mut model2, &mut head2, &samples, &cfg).unwrap();
        assert_eq!(h1, h2, "same seed must replay the same history");
        assert!(head.w.bits_eq(&head2.w));

        let report = evaluate(&model, &head, &samples).unwrap();
        assert!(report.accuracy >= 0.9, "toy accuracy {}", report.accuracy);
    }

    #[test]
    fn zero_learning_rate_leaves_trainables_byte_stable() {
        let (samples, _) = toy_samples(2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 2,
            seed: 9,
        };
        let mut model = tiny_model(3);
        let mut head = ClassifierHead::new(8, 2).unwrap();
        let before: Vec<Tensor> = model.trainable_params().into_iter().cloned().collect();
        let b_head = head.w.clone();
        train(&mut model, &mut head, &samples, &cfg).unwrap();
        for (p, b) in model.trainable_params().into_iter().zip(&before) {
            assert!(p.bits_eq(b));
        }
        assert!(head.w.bits_eq(&b_head));
    }

    #[test]
    fn training_rejects_bad_labels_and_empty_sets() {
        let mut model = tiny_model(4);
        let mut head = ClassifierHead::new(8, 2).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut model, &mut head, &[], &cfg),
            Err(Error::Data(_))
        ));
        let bad = vec![TrainSample {
            features: Tensor::zeros(&[3, 5]),
            label: 2,
        }];
        assert!(matches!(
            train(&mut model, &mut head, &bad, &cfg),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn selection_takes_the_first_of_the_best() {
        assert_eq!(select_best(&[0.5, 0.5, 0.5]), Some(0));
        assert_eq!(select_best(&[0.4, 0.6, 0.6]), Some(1));
        assert_eq!(select_best(&[]), None);
        assert_eq!(select_best(&[0.1, 0.3, 0.9]), Some(2));
    }

    #[test]
    fn cross_validation_partitions_and_persists() {
        let (samples, ids) = toy_samples(10);
        let spec = CvSpec {
            k: 5,
            n_classes: 2,
            encoder: tiny_encoder(),
            adapter: AdapterConfig { rank: 2, ..AdapterConfig::default() },
            train: TrainConfig {
                learning_rate: 0.02,
                epochs: 1,
                batch_size: 4,
                seed: 3,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let result = cross_validate(&samples, &ids, &spec, dir.path()).unwrap();
        assert_eq!(result.folds.len(), 5);
        let mut seen = vec![false; samples.len()];
        for fr in &result.folds {
            assert_eq!(fr.report.confusion.iter().flatten().sum::<u64>(), 4);
            assert!(fr.checkpoint.exists());
        }
        // Rebuild fold membership from the stratifier to confirm the
        // partition property end to end.
        let keys: Vec<(String, usize)> = ids
            .iter()
            .cloned()
            .zip(samples.iter().map(|s| s.label))
            .collect();
        for fold in stratified_folds(&keys, 5, spec.train.seed).unwrap() {
            for i in fold {
                assert!(!seen[i], "example {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(result.selected_checkpoint.exists());
        assert!(result.selected < 5);
    }
}
