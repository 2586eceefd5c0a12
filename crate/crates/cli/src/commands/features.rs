//! `features`: extract per-clip features from a manifest to reusable files.

use std::path::PathBuf;

use clap::ValueEnum;
use peftkit_core::checkpoint::Checkpoint;
use peftkit_core::data::Split;
use peftkit_core::features::{feature_names, LogMelExtractor};
use peftkit_core::{Error, Result};
use rayon::prelude::*;

use crate::pipeline::{functional_matrix, Corpus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureKind {
    /// 88 clip-level functionals to a CSV.
    Functionals,
    /// Log-Mel frame matrices to a tensor container.
    Logmel,
}

#[derive(clap::Args, Clone, Debug)]
pub struct FeaturesArgs {
    /// JSONL manifest; audio paths resolve relative to its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureKind::Functionals)]
    pub kind: FeatureKind,
    /// Pad or truncate every clip to this length first.
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    /// Mel bands for --kind logmel.
    #[arg(long, default_value_t = 80)]
    pub mels: usize,
}

pub fn run(args: &FeaturesArgs) -> Result<()> {
    if !args.seconds.is_finite() || args.seconds <= 0.0 {
        return Err(Error::Config(format!(
            "--seconds {} must be a positive duration",
            args.seconds
        )));
    }
    let corpus = Corpus::load(&args.manifest, args.seconds)?;
    std::fs::create_dir_all(&args.out)?;
    match args.kind {
        FeatureKind::Functionals => {
            let x = functional_matrix(&corpus)?;
            let mut csv = String::from("id,label,split");
            for name in feature_names() {
                csv.push(',');
                csv.push_str(&name);
            }
            csv.push('\n');
            for (i, entry) in corpus.entries.iter().enumerate() {
                let split = match entry.split {
                    Split::Train => "train",
                    Split::Dev => "dev",
                    Split::Test => "test",
                };
                csv.push_str(&format!("{},{},{split}", entry.id, entry.label));
                for v in x.row(i) {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
            let path = args.out.join("features.csv");
            std::fs::write(&path, csv)?;
            println!("rows={} out={}", corpus.entries.len(), path.display());
        }
        FeatureKind::Logmel => {
            let extractor = LogMelExtractor::new(args.mels)?;
            let frames = corpus
                .clips
                .par_iter()
                .map(|clip| extractor.compute(clip))
                .collect::<Result<Vec<_>>>()?;
            let mut ckpt = Checkpoint::new();
            ckpt.push_scalar("meta.n_mels", args.mels as f64)?;
            ckpt.push_scalar("meta.n_clips", corpus.entries.len() as f64)?;
            for (entry, lm) in corpus.entries.iter().zip(frames) {
                ckpt.push(&format!("logmel.{}", entry.id), lm.frames)?;
                ckpt.push_scalar(&format!("label.{}", entry.id), entry.label as f64)?;
            }
            let path = args.out.join("logmel.ckpt");
            ckpt.save(&path)?;
            println!("clips={} out={}", corpus.entries.len(), path.display());
        }
    }
    Ok(())
}
