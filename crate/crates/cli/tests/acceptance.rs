//! Acceptance gate: twelve end-to-end checks, one test per check, each
//! printing a single `acceptance NN (...): PASS` line (visible with
//! `--nocapture`).
//!
//! The slow checks share one fixture: a 200-clip synthetic corpus
//! (seed 7) plus five full runs driven through the compiled binary
//! exactly as a user would invoke it. Everything here is deterministic,
//! so the asserted margins are reproducible bit for bit.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use peftkit_core::checkpoint::{
    load_adapter_only, load_encoder, save_adapter_only, save_encoder,
};
use peftkit_core::classifier::{
    head_logits_nodes, pool_and_classify, train_subset, ClassifierHead, TrainConfig, TrainSample,
};
use peftkit_core::encoder::{encoder_forward, init_weights, EncoderConfig};
use peftkit_core::features::{AudioClip, LogMelExtractor, LOG_FLOOR};
use peftkit_core::metrics::ConfusionMatrix;
use peftkit_core::ndgrad::{grad_check, Tape};
use peftkit_core::peft::{
    attach_adapters, dora_effective_weight, trainable_parameter_report, AdaptedModel,
    AdapterConfig, AdapterVariant,
};
use peftkit_core::svm::{svm_train_binary, SvmParams};
use peftkit_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_peftkit")
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn");
    assert!(
        out.status.success(),
        "`peftkit {}` failed with {:?}\nstdout: {}\nstderr: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, contents: &str) {
    fs::write(dir.join(name), contents).unwrap();
}

#[derive(Deserialize)]
struct RunMetrics {
    task: String,
    variant: String,
    accuracy: f64,
    macro_f1: f64,
    per_class_f1: Vec<f64>,
    confusion: Vec<Vec<u64>>,
}

fn read_metrics(dir: &Path, run: &str) -> RunMetrics {
    let path = dir.join(run).join("metrics.json");
    let text = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

/// Corpus plus the five training/baseline runs the learning checks score.
/// Built once, through the binary, on first use.
struct Fixture {
    _dir: tempfile::TempDir,
    lora: RunMetrics,
    dora: RunMetrics,
    frozen: RunMetrics,
    svm_detect: RunMetrics,
    svm_severity: RunMetrics,
    elapsed: Duration,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let start = Instant::now();

        write(dir, "synth.json", r#"{"n_per_class": 50, "duration_s": 3.0, "seed": 7}"#);
        run_ok(dir, &["synth", "--config", "synth.json", "--out", "corpus"]);

        let adapter_run = |variant: &str, out: &str, epochs: usize, lr: f64| {
            format!(
                r#"{{
  "task": "severity",
  "variant": "{variant}",
  "seed": 7,
  "manifest": "corpus/manifest.jsonl",
  "out": "{out}",
  "clip_seconds": 1.0,
  "train": {{"epochs": {epochs}, "learning_rate": {lr}}}
}}"#
            )
        };
        write(dir, "lora.json", &adapter_run("lora", "lora", 30, 0.0008));
        write(dir, "dora.json", &adapter_run("dora", "dora", 30, 0.0008));
        write(dir, "frozen.json", &adapter_run("lora", "frozen", 30, 0.0));
        let svm_run = |task: &str, out: &str| {
            format!(
                r#"{{"task": "{task}", "variant": "baseline-svm", "seed": 7, "manifest": "corpus/manifest.jsonl", "out": "{out}", "clip_seconds": 1.0}}"#
            )
        };
        write(dir, "svm-detect.json", &svm_run("detect", "svm-detect"));
        write(dir, "svm-severity.json", &svm_run("severity", "svm-severity"));

        for cfg in ["lora.json", "dora.json", "frozen.json", "svm-detect.json", "svm-severity.json"]
        {
            run_ok(dir, &["train", "--config", cfg]);
        }

        Fixture {
            lora: read_metrics(dir, "lora"),
            dora: read_metrics(dir, "dora"),
            frozen: read_metrics(dir, "frozen"),
            svm_detect: read_metrics(dir, "svm-detect"),
            svm_severity: read_metrics(dir, "svm-severity"),
            elapsed: start.elapsed(),
            _dir: tmp,
        }
    })
}

fn rand_frames(rng: &mut ChaCha8Rng, n_mels: usize, max_t: usize) -> Tensor {
    let t = rng.random_range(4..=max_t);
    Tensor::from_fn(&[t, n_mels], |_| rng.random_range(-4.0..4.0))
}

#[test]
fn c01_adapters_start_at_the_exact_base_model() {
    let start = Instant::now();
    let cfg = EncoderConfig::default();
    let base = init_weights(&cfg).unwrap();
    let head = ClassifierHead::new(cfg.d_model, 4).unwrap();
    for (variant, seed) in [(AdapterVariant::Lora, 9u64), (AdapterVariant::Dora, 10)] {
        let acfg = AdapterConfig { variant, ..AdapterConfig::default() };
        let model = attach_adapters(base.clone(), &acfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
        for probe in 0..16 {
            let x = rand_frames(&mut rng, cfg.n_mels, 24);
            let base_h = encoder_forward(&base, &x).unwrap();
            let adapted_h = model.forward(&x).unwrap();
            let h_dev = adapted_h.max_abs_diff(&base_h);
            assert!(
                h_dev <= 1e-12,
                "{variant} probe {probe}: hidden-state deviation {h_dev:e} at step 0"
            );
            let base_logits = pool_and_classify(&base_h, &head).unwrap();
            let adapted_logits = pool_and_classify(&adapted_h, &head).unwrap();
            let l_dev = adapted_logits.max_abs_diff(&base_logits);
            assert!(
                l_dev <= 1e-12,
                "{variant} probe {probe}: logit deviation {l_dev:e} at step 0"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}, budget 5 s");
    println!("acceptance 01 (zero-init identity): PASS ({elapsed:.2?})");
}

/// 20 samples with batch size 5 make exactly 4 optimizer steps per epoch,
/// so 25 epochs is exactly 100 steps.
fn hundred_step_setup(
    variant: AdapterVariant,
) -> (AdaptedModel, ClassifierHead, Vec<TrainSample>, TrainConfig) {
    let cfg = EncoderConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 32,
        d_ff: 64,
        n_mels: 13,
        max_frames: 32,
        seed: 5,
    };
    let base = init_weights(&cfg).unwrap();
    let acfg = AdapterConfig { variant, rank: 4, ..AdapterConfig::default() };
    let model = attach_adapters(base, &acfg, 17).unwrap();
    let head = ClassifierHead::new(cfg.d_model, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let samples: Vec<TrainSample> = (0..20)
        .map(|i| TrainSample {
            features: Tensor::from_fn(&[12, cfg.n_mels], |_| rng.random_range(-2.0..2.0)),
            label: i % 4,
        })
        .collect();
    let train = TrainConfig { learning_rate: 8e-4, epochs: 25, batch_size: 5, seed: 3 };
    (model, head, samples, train)
}

fn assert_merge_matches(model: &AdaptedModel, probe_seed: u64, stage: &str) {
    let merged = model.merge().unwrap();
    let n_mels = model.base.cfg.n_mels;
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    for probe in 0..16 {
        let x = rand_frames(&mut rng, n_mels, model.base.cfg.max_frames);
        let adapted = model.forward(&x).unwrap();
        let folded = encoder_forward(&merged, &x).unwrap();
        let dev = adapted.max_abs_diff(&folded);
        assert!(
            dev <= 1e-10,
            "{} {stage}, probe {probe}: merged-vs-adapted deviation {dev:e}",
            model.adapter_cfg.variant
        );
    }
}

#[test]
fn c02_merged_weights_reproduce_the_adapted_forward() {
    let start = Instant::now();
    for variant in [AdapterVariant::Lora, AdapterVariant::Dora] {
        let (mut model, mut head, samples, train) = hundred_step_setup(variant);
        assert_merge_matches(&model, 0xbeef, "before training");
        let indices: Vec<usize> = (0..samples.len()).collect();
        let history = train_subset(&mut model, &mut head, &samples, &indices, &train).unwrap();
        assert_eq!(history.len(), 25, "one loss per epoch");
        assert_merge_matches(&model, 0xcafe, "after 100 steps");
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 60 s");
    println!("acceptance 02 (merge equivalence): PASS ({elapsed:.2?})");
}

#[test]
fn c03_magnitude_direction_decomposition_holds() {
    let cfg = EncoderConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 32,
        d_ff: 64,
        n_mels: 13,
        max_frames: 32,
        seed: 6,
    };
    let base = init_weights(&cfg).unwrap();
    let acfg = AdapterConfig {
        variant: AdapterVariant::Dora,
        rank: 4,
        ..AdapterConfig::default()
    };
    let mut model = attach_adapters(base, &acfg, 23).unwrap();
    // Move every factor off its init so the identity is not checked at the
    // trivial point B = 0, m = column norms of W0.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for p in model.trainable_params_mut() {
        for v in p.data_mut() {
            *v = if *v == 0.0 {
                rng.random_range(-0.2..0.2)
            } else {
                *v * (1.0 + rng.random_range(-0.2..0.2))
            };
        }
    }
    let alpha = 2.5;
    for (l, (lw, ad)) in model.base.layers.iter().zip(&model.layers).enumerate() {
        for (name, w0, adapter) in [("q", &lw.wq, &ad.q), ("k", &lw.wk, &ad.k), ("v", &lw.wv, &ad.v)]
        {
            let m = adapter.m.as_ref().expect("DoRA adapter carries m");
            let w = dora_effective_weight(w0, &adapter.a, &adapter.b, m).unwrap();
            for j in 0..w.cols() {
                let norm: f64 =
                    (0..w.rows()).map(|i| w.at(i, j) * w.at(i, j)).sum::<f64>().sqrt();
                // ||W_j|| = m_j means the direction factor W_j / m_j is unit.
                let dir_norm = norm / m.data()[j].abs();
                assert!(
                    (dir_norm - 1.0).abs() <= 1e-9,
                    "layer {l} {name} column {j}: direction norm {dir_norm}"
                );
            }
            let m_scaled = Tensor::from_fn(&[m.len()], |j| alpha * m.data()[j]);
            let w_scaled = dora_effective_weight(w0, &adapter.a, &adapter.b, &m_scaled).unwrap();
            for (idx, (&got, &base_val)) in
                w_scaled.data().iter().zip(w.data()).enumerate()
            {
                let want = alpha * base_val;
                if want == 0.0 {
                    assert_eq!(got, 0.0, "layer {l} {name} flat index {idx}");
                } else {
                    let rel = ((got - want) / want).abs();
                    assert!(
                        rel <= 1e-12,
                        "layer {l} {name} flat index {idx}: relative error {rel:e}"
                    );
                }
            }
        }
    }
    println!("acceptance 03 (magnitude-direction decomposition): PASS");
}

#[test]
fn c04_full_loss_gradients_survive_finite_differences() {
    let start = Instant::now();
    let cfg = EncoderConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 32,
        d_ff: 32,
        n_mels: 5,
        max_frames: 8,
        seed: 21,
    };
    let base = init_weights(&cfg).unwrap();
    let acfg = AdapterConfig {
        variant: AdapterVariant::Dora,
        rank: 2,
        ..AdapterConfig::default()
    };
    let mut model = attach_adapters(base, &acfg, 11).unwrap();
    let mut head = ClassifierHead::new(cfg.d_model, 4).unwrap();
    // Nudge everything off init so no gradient path is trivially zero (the
    // head and the B factors start at exactly zero).
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    {
        let mut slots = model.trainable_params_mut();
        slots.push(&mut head.w);
        slots.push(&mut head.b);
        for slot in slots {
            for v in slot.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    let features = Tensor::from_fn(&[8, cfg.n_mels], |i| 0.4 * ((i as f64) * 0.7).sin());
    let full_loss = |params: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        let mut m = model.clone();
        let mut h = head.clone();
        {
            let mut slots = m.trainable_params_mut();
            slots.push(&mut h.w);
            slots.push(&mut h.b);
            assert_eq!(slots.len(), params.len(), "parameter count changed");
            for (slot, p) in slots.iter_mut().zip(params) {
                **slot = p.clone();
            }
        }
        let mut tape = Tape::new();
        let (hidden, mut ids) = m.forward_nodes(&mut tape, &features)?;
        let w = tape.param(h.w.clone());
        let b = tape.param(h.b.clone());
        ids.push(w);
        ids.push(b);
        let logits = head_logits_nodes(&mut tape, hidden, w, b)?;
        let loss = tape.cross_entropy(logits, 2)?;
        let loss_val = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        let out = ids
            .iter()
            .map(|&id| grads.take(id).expect("every trainable reaches the loss"))
            .collect();
        Ok((loss_val, out))
    };
    let startpt: Vec<Tensor> = model
        .trainable_params()
        .into_iter()
        .chain([&head.w, &head.b])
        .cloned()
        .collect();
    let n_scalars: usize = startpt.iter().map(|t| t.len()).sum();
    let err = grad_check(full_loss, &startpt, 1e-5).unwrap();
    assert!(err <= 1e-4, "worst relative error {err:e} over {n_scalars} coordinates");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}, budget 2 min");
    println!(
        "acceptance 04 (full-loss gradients): PASS (err={err:.2e}, {n_scalars} coords, {elapsed:.2?})"
    );
}

#[test]
fn c05_base_weights_never_move_during_training() {
    let cfg = EncoderConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        n_mels: 8,
        max_frames: 8,
        seed: 4,
    };
    // 8 samples with batch size 4 make 2 steps per epoch; 100 epochs is
    // exactly 200 optimizer steps.
    let train = TrainConfig { learning_rate: 8e-4, epochs: 100, batch_size: 4, seed: 9 };
    for variant in [AdapterVariant::Lora, AdapterVariant::Dora] {
        let before = init_weights(&cfg).unwrap();
        let acfg = AdapterConfig { variant, rank: 2, ..AdapterConfig::default() };
        let mut model = attach_adapters(before.clone(), &acfg, 19).unwrap();
        let mut head = ClassifierHead::new(cfg.d_model, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let samples: Vec<TrainSample> = (0..8)
            .map(|i| TrainSample {
                features: Tensor::from_fn(&[6, cfg.n_mels], |_| rng.random_range(-2.0..2.0)),
                label: i % 2,
            })
            .collect();
        let indices: Vec<usize> = (0..samples.len()).collect();
        train_subset(&mut model, &mut head, &samples, &indices, &train).unwrap();
        // Positive control: training actually moved the adapters.
        let moved = model.layers[0].q.b.data().iter().any(|&v| v != 0.0);
        assert!(moved, "{variant}: 200 steps left B at zero, nothing trained");
        assert!(
            model.base.input_proj.bits_eq(&before.input_proj),
            "{variant}: input projection changed"
        );
        assert!(model.base.pos.bits_eq(&before.pos), "{variant}: positional table changed");
        for (l, (after_l, before_l)) in
            model.base.layers.iter().zip(&before.layers).enumerate()
        {
            let pairs = [
                ("wq", &after_l.wq, &before_l.wq),
                ("wk", &after_l.wk, &before_l.wk),
                ("wv", &after_l.wv, &before_l.wv),
                ("wo", &after_l.wo, &before_l.wo),
                ("w1", &after_l.w1, &before_l.w1),
                ("b1", &after_l.b1, &before_l.b1),
                ("w2", &after_l.w2, &before_l.w2),
                ("b2", &after_l.b2, &before_l.b2),
                ("ln1_gamma", &after_l.ln1_gamma, &before_l.ln1_gamma),
                ("ln1_beta", &after_l.ln1_beta, &before_l.ln1_beta),
                ("ln2_gamma", &after_l.ln2_gamma, &before_l.ln2_gamma),
                ("ln2_beta", &after_l.ln2_beta, &before_l.ln2_beta),
            ];
            for (name, after_t, before_t) in pairs {
                assert!(
                    after_t.bits_eq(before_t),
                    "{variant}: layer {l} {name} bytes changed after 200 steps"
                );
            }
        }
    }
    println!("acceptance 05 (frozen-base invariance): PASS");
}

#[test]
fn c06_trainable_counts_match_the_closed_forms() {
    let cfg = EncoderConfig::default();
    let (d, r, n_classes) = (cfg.d_model, AdapterConfig::default().rank, 4);
    // Adapters target the three square attention projections per layer.
    let lora_form = cfg.n_layers * 3 * r * (d + d);
    let dora_form = lora_form + cfg.n_layers * 3 * d;
    let head_form = d * n_classes + n_classes;
    let base_form = cfg.n_mels * d
        + cfg.n_layers * (4 * d * d + (d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d) + 4 * d);
    assert_eq!(lora_form, 6144);
    assert_eq!(dora_form, 6528);
    assert_eq!(head_form, 260);
    assert_eq!(base_form, 104_576);

    let base = init_weights(&cfg).unwrap();
    assert_eq!(base.count_parameters().total(), base_form, "base parameter count");
    let mut ratios = Vec::new();
    for (variant, form) in [(AdapterVariant::Lora, lora_form), (AdapterVariant::Dora, dora_form)]
    {
        let acfg = AdapterConfig { variant, ..AdapterConfig::default() };
        let model = attach_adapters(base.clone(), &acfg, 3).unwrap();
        assert_eq!(model.n_trainable(), form, "{variant} adapter parameter count");
        let report = trainable_parameter_report(&model, n_classes);
        assert_eq!(report.adapter, form);
        assert_eq!(report.head, head_form);
        assert_eq!(report.trainable, form + head_form);
        assert_eq!(report.total, base_form + form + head_form);
        assert!(
            report.ratio < 0.15,
            "{variant}: trainable/total ratio {} is not parameter-efficient",
            report.ratio
        );
        ratios.push(report.ratio);
    }
    println!(
        "acceptance 06 (parameter budget): PASS (lora={}+{head_form}, dora={}+{head_form}, ratios {:.4}/{:.4})",
        lora_form, dora_form, ratios[0], ratios[1]
    );
}

#[test]
fn c07_adapters_learn_the_synthetic_task_and_frozen_control_does_not() {
    let fx = fixture();
    for (name, m) in [("lora", &fx.lora), ("dora", &fx.dora)] {
        assert_eq!(m.task, "severity");
        assert_eq!(m.variant, name);
        assert_eq!(m.per_class_f1.len(), 4);
        assert!(
            m.macro_f1 >= 0.90,
            "{name}: eval macro-F1 {:.4} under the 0.90 bar (confusion {:?})",
            m.macro_f1,
            m.confusion
        );
    }
    assert!(
        fx.frozen.macro_f1 <= 0.40,
        "frozen lr=0 control reached macro-F1 {:.4}, should stay at chance",
        fx.frozen.macro_f1
    );
    assert!(
        fx.elapsed < Duration::from_secs(600),
        "corpus synthesis plus all five runs took {:?}, budget 10 min",
        fx.elapsed
    );
    println!(
        "acceptance 07 (end-to-end learning): PASS (lora={:.4}, dora={:.4}, frozen={:.4}, {:.0?} total)",
        fx.lora.macro_f1, fx.dora.macro_f1, fx.frozen.macro_f1, fx.elapsed
    );
}

#[test]
fn c08_handcrafted_baseline_detects_but_adapters_win_on_severity() {
    let fx = fixture();
    assert_eq!(fx.svm_detect.task, "detect");
    assert_eq!(fx.svm_detect.variant, "baseline-svm");
    assert!(
        fx.svm_detect.accuracy >= 0.80,
        "detection accuracy {:.4} under the 0.80 bar (confusion {:?})",
        fx.svm_detect.accuracy,
        fx.svm_detect.confusion
    );
    let gap = fx.lora.macro_f1 - fx.svm_severity.macro_f1;
    assert!(
        gap >= 0.05,
        "adapter macro-F1 {:.4} vs SVM {:.4}: margin {gap:.4} under 0.05",
        fx.lora.macro_f1,
        fx.svm_severity.macro_f1
    );
    println!(
        "acceptance 08 (baseline ordering): PASS (svm detect acc={:.4}, severity gap={gap:.4})",
        fx.svm_detect.accuracy
    );
}

#[test]
fn c09_metrics_match_a_brute_force_oracle_exactly() {
    let preds = [0usize, 1, 1];
    let labels = [0usize, 1, 0];
    let m = ConfusionMatrix::from_pairs(&preds, &labels, 2).unwrap();
    assert_eq!(m.rows(), vec![vec![1, 1], vec![0, 1]]);

    // Brute-force per-class precision/recall/F1 straight from the pairs.
    let mut oracle_f1 = Vec::new();
    for c in 0..2 {
        let tp = preds.iter().zip(&labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
        let pred_c = preds.iter().filter(|&&p| p == c).count() as f64;
        let true_c = labels.iter().filter(|&&l| l == c).count() as f64;
        let precision = if pred_c == 0.0 { 0.0 } else { tp / pred_c };
        let recall = if true_c == 0.0 { 0.0 } else { tp / true_c };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        oracle_f1.push(f1);
    }
    let oracle_macro = oracle_f1.iter().sum::<f64>() / oracle_f1.len() as f64;

    assert_eq!(m.per_class_f1().unwrap(), oracle_f1, "per-class F1 vs oracle");
    assert_eq!(m.macro_f1().unwrap(), oracle_macro, "macro-F1 vs oracle");
    assert_eq!(m.macro_f1().unwrap(), 2.0 / 3.0, "macro-F1 must be exactly 2/3");
    assert_eq!(m.accuracy().unwrap(), 2.0 / 3.0, "accuracy must be exactly 2/3");
    println!("acceptance 09 (metrics oracle): PASS");
}

#[derive(Deserialize)]
struct FoldIn {
    fold: usize,
    accuracy: f64,
    macro_f1: f64,
    per_class_f1: Vec<f64>,
    confusion: Vec<Vec<u64>>,
    checkpoint: String,
}

#[derive(Deserialize)]
struct FoldsIn {
    folds: Vec<FoldIn>,
    selected: usize,
}

#[test]
fn c10_cross_validation_is_stratified_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // 10 clips per class: 6 train + 2 dev pooled per class, 2 test held out.
    write(dir, "synth.json", r#"{"n_per_class": 10, "duration_s": 0.5, "seed": 11}"#);
    run_ok(dir, &["synth", "--config", "synth.json", "--out", "corpus"]);
    for out in ["cv-a", "cv-b"] {
        write(
            dir,
            &format!("{out}.json"),
            &format!(
                r#"{{
  "task": "severity",
  "variant": "lora",
  "seed": 11,
  "manifest": "corpus/manifest.jsonl",
  "out": "{out}",
  "clip_seconds": 0.5,
  "folds": 5,
  "encoder": {{"n_layers": 1, "n_heads": 2, "d_model": 32, "d_ff": 64, "n_mels": 40, "max_frames": 64}},
  "train": {{"epochs": 2}}
}}"#
            ),
        );
        run_ok(dir, &["cv", "--config", &format!("{out}.json")]);
    }
    let bytes_a = fs::read(dir.join("cv-a/folds.json")).unwrap();
    let bytes_b = fs::read(dir.join("cv-b/folds.json")).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must give byte-identical folds.json");

    let parsed: FoldsIn = serde_json::from_slice(&bytes_a).unwrap();
    assert_eq!(parsed.folds.len(), 5);
    let n_classes = 4;
    let pooled_per_class = 8u64;
    // Per-class held-out counts per fold, recovered from confusion row sums.
    let mut counts = vec![Vec::new(); n_classes];
    for (i, f) in parsed.folds.iter().enumerate() {
        assert_eq!(f.fold, i, "folds must be reported in index order");
        assert_eq!(f.per_class_f1.len(), n_classes);
        assert!((0.0..=1.0).contains(&f.accuracy), "fold {i} accuracy {}", f.accuracy);
        assert_eq!(f.checkpoint, format!("fold{i}.ckpt"));
        for (c, row) in f.confusion.iter().enumerate() {
            counts[c].push(row.iter().sum::<u64>());
        }
    }
    for (c, per_fold) in counts.iter().enumerate() {
        let (min, max) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
        assert!(
            max - min <= 1,
            "class {c} fold sizes {per_fold:?} differ by more than 1"
        );
        assert_eq!(
            per_fold.iter().sum::<u64>(),
            pooled_per_class,
            "class {c} fold sizes {per_fold:?} must partition the pooled clips"
        );
    }
    // Winner is the argmax of macro-F1 with ties going to the lower index.
    let mut want = 0;
    for (i, f) in parsed.folds.iter().enumerate() {
        if f.macro_f1 > parsed.folds[want].macro_f1 {
            want = i;
        }
    }
    assert_eq!(parsed.selected, want, "selection must be lowest-index argmax");
    assert!(dir.join("cv-a/selected.ckpt").exists(), "winning checkpoint not copied");
    println!("acceptance 10 (cross-validation protocol): PASS (selected fold {want})");
}

#[test]
fn c11_smo_solves_xor_with_clean_kkt_conditions() {
    let x = Tensor::from_fn(&[4, 2], |i| {
        let (row, col) = (i / 2, i % 2);
        [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]][row][col]
    });
    let y = [-1.0, 1.0, 1.0, -1.0];
    let params = SvmParams { c: 1.0, gamma: Some(2.0), seed: 42 };
    let (svm, report) = svm_train_binary(&x, &y, &params).unwrap();
    for (i, &label) in y.iter().enumerate() {
        let point = [x.at(i, 0), x.at(i, 1)];
        let d = svm.decision(&point).unwrap();
        assert!(
            d * label > 0.0,
            "point {point:?}: decision {d:.4} disagrees with label {label}"
        );
    }
    assert!(
        report.max_kkt_violation <= 1e-3,
        "max KKT residual {:.3e}",
        report.max_kkt_violation
    );
    assert!(
        report.dual_balance.abs() <= 1e-6,
        "sum of alpha_i y_i = {:.3e} violates the equality constraint",
        report.dual_balance
    );
    assert!(report.converged, "SMO did not converge in {} passes", report.passes);
    println!(
        "acceptance 11 (SMO solver on XOR): PASS (kkt={:.1e}, balance={:.1e})",
        report.max_kkt_violation,
        report.dual_balance.abs()
    );
}

#[test]
fn c12_dsp_and_checkpoint_contracts_hold() {
    let extractor = LogMelExtractor::new(80).unwrap();
    let floor = LOG_FLOOR.ln();

    let tone: Vec<f64> = (0..16_000).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
    let lm = extractor.compute(&AudioClip::new(tone, 16_000).unwrap()).unwrap();
    assert_eq!(lm.n_frames(), 98, "1 s at 16 kHz must give 98 frames");
    assert_eq!(lm.frames.cols(), 80);

    let silence = AudioClip::new(vec![0.0; 16_000], 16_000).unwrap();
    let quiet = extractor.compute(&silence).unwrap();
    assert!(
        quiet.frames.data().iter().all(|v| v.to_bits() == floor.to_bits()),
        "silence must map every cell to ln(1e-10) exactly"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let noise: Vec<f64> = (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let alpha = 2.0;
    let louder: Vec<f64> = noise.iter().map(|v| alpha * v).collect();
    let lm1 = extractor.compute(&AudioClip::new(noise, 16_000).unwrap()).unwrap();
    let lm2 = extractor.compute(&AudioClip::new(louder, 16_000).unwrap()).unwrap();
    let shift = (alpha * alpha).ln();
    let mut checked = 0usize;
    for (&a, &b) in lm1.frames.data().iter().zip(lm2.frames.data()) {
        if a > floor {
            assert!(
                (b - a - shift).abs() <= 1e-9,
                "unfloored cell moved by {} instead of ln(alpha^2) = {shift}",
                b - a
            );
            checked += 1;
        }
    }
    assert!(checked > 0, "no unfloored cells, the shift property was never exercised");

    let tmp = tempfile::tempdir().unwrap();
    let cfg = EncoderConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        n_mels: 8,
        max_frames: 8,
        seed: 4,
    };
    let weights = init_weights(&cfg).unwrap();
    let enc_path = tmp.path().join("enc.ckpt");
    save_encoder(&enc_path, &weights).unwrap();
    let loaded = load_encoder(&enc_path).unwrap();
    assert_eq!(loaded.cfg, cfg);
    assert!(loaded.input_proj.bits_eq(&weights.input_proj), "input projection round trip");
    assert!(loaded.pos.bits_eq(&weights.pos), "positional table round trip");
    for (l, (a, b)) in loaded.layers.iter().zip(&weights.layers).enumerate() {
        for (name, ta, tb) in [
            ("wq", &a.wq, &b.wq),
            ("wk", &a.wk, &b.wk),
            ("wv", &a.wv, &b.wv),
            ("wo", &a.wo, &b.wo),
            ("w1", &a.w1, &b.w1),
            ("b1", &a.b1, &b.b1),
            ("w2", &a.w2, &b.w2),
            ("b2", &a.b2, &b.b2),
            ("ln1_gamma", &a.ln1_gamma, &b.ln1_gamma),
            ("ln1_beta", &a.ln1_beta, &b.ln1_beta),
            ("ln2_gamma", &a.ln2_gamma, &b.ln2_gamma),
            ("ln2_beta", &a.ln2_beta, &b.ln2_beta),
        ] {
            assert!(ta.bits_eq(tb), "layer {l} {name} round trip not bit-exact");
        }
    }

    let acfg = AdapterConfig {
        variant: AdapterVariant::Dora,
        rank: 2,
        ..AdapterConfig::default()
    };
    let mut model = attach_adapters(weights.clone(), &acfg, 37).unwrap();
    let mut head = ClassifierHead::new(cfg.d_model, 4).unwrap();
    {
        let mut slots = model.trainable_params_mut();
        slots.push(&mut head.w);
        slots.push(&mut head.b);
        for slot in slots {
            for v in slot.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let ad_path = tmp.path().join("adapter.ckpt");
    save_adapter_only(&ad_path, &model, &head).unwrap();
    let (model2, head2) = load_adapter_only(&ad_path, weights).unwrap();
    for ((a, b), name) in model
        .trainable_params()
        .into_iter()
        .zip(model2.trainable_params())
        .zip(model.trainable_names())
    {
        assert!(a.bits_eq(b), "{name} round trip not bit-exact");
    }
    assert!(head2.w.bits_eq(&head.w), "head weight round trip not bit-exact");
    assert!(head2.b.bits_eq(&head.b), "head bias round trip not bit-exact");
    println!("acceptance 12 (DSP and checkpoint contracts): PASS");
}
