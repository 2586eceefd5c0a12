//! `merge` folds a trained adapter checkpoint into its frozen base and
//! writes a plain encoder checkpoint that needs no adapter code to load.
//!
//! The merged weights are probed against the unmerged model on 16 seeded
//! random inputs; the worst forward deviation is printed and must stay at
//! or below 1e-10.

use std::path::PathBuf;

use clap::Args;
use peftkit_core::checkpoint::{load_adapter_only, load_encoder, save_encoder};
use peftkit_core::encoder::encoder_forward;
use peftkit_core::{Error, Result, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Probe inputs are seeded independently of any run config so the printed
/// deviation is comparable across runs.
const PROBE_SEED: u64 = 0x6d65_7267;
const PROBES: usize = 16;
const MAX_DEV: f64 = 1e-10;

#[derive(Args, Debug)]
pub struct MergeArgs {
    /// Frozen base encoder checkpoint.
    #[arg(long)]
    pub base: PathBuf,
    /// Adapter checkpoint produced by `train`.
    #[arg(long)]
    pub adapter: PathBuf,
    /// Destination for the merged encoder checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &MergeArgs) -> Result<()> {
    let base = load_encoder(&args.base)?;
    let n_mels = base.cfg.n_mels;
    let max_t = base.cfg.max_frames.clamp(4, 24);
    let (model, _head) = load_adapter_only(&args.adapter, base)?;
    let merged = model.merge()?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_encoder(&args.out, &merged)?;
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let t = rng.random_range(4..=max_t);
        let x = Tensor::from_fn(&[t, n_mels], |_| rng.random_range(-4.0..4.0));
        let adapted = model.forward(&x)?;
        let plain = encoder_forward(&merged, &x)?;
        worst = worst.max(adapted.max_abs_diff(&plain));
    }
    println!("max_forward_dev={worst}");
    if !(worst <= MAX_DEV) {
        return Err(Error::Numeric(format!(
            "merged encoder deviates from the adapted model by {worst} (limit {MAX_DEV})"
        )));
    }
    Ok(())
}
