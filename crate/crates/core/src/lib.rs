//! Parameter-efficient fine-tuning of a compact transformer audio encoder,
//! plus the handcrafted-feature SVM baselines it is compared against.
//!
//! The crate is organized bottom-up:
//!
//! * [`ndgrad`] — dense f64 tensors and tape-based reverse-mode
//!   differentiation, sized for desk-scale models.
//! * [`encoder`] — a pre-norm transformer encoder over log-Mel frames.
//! * [`peft`] — LoRA and DoRA adapters on the encoder's Q/K/V projections,
//!   including merging adapters back into plain weights.
//! * [`classifier`] — mean-pool classification head, Adam, the training
//!   loop, and k-fold cross-validation.
//! * [`features`] — resampling, duration normalization, log-Mel
//!   spectrograms, an 88-dim functional feature vector, and PCA.
//! * [`svm`] — RBF-kernel SVM trained with a simplified SMO solver,
//!   one-vs-rest for more than two classes.
//! * [`metrics`] — confusion matrices, accuracy, and macro-F1.
//! * [`data`] — JSONL manifests, PCM16 WAV I/O, the synthetic vowel
//!   corpus generator, and stratified fold assignment.
//! * [`checkpoint`] — a small binary container for named f64 tensors,
//!   with schema helpers for every model kind in the crate.
//!
//! Everything is seeded explicitly; with equal seeds and configs, every
//! pipeline in this crate reproduces its outputs bit for bit.

pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod encoder;
pub mod error;
pub mod features;
pub mod metrics;
pub mod ndgrad;
pub mod peft;
pub mod svm;

pub use error::{Error, Result};
pub use ndgrad::Tensor;
