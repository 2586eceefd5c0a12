//! `synth`: generate a labeled synthetic corpus from a JSON description.

use std::path::PathBuf;

use peftkit_core::data::synth::{synthesize_dataset, SynthConfig};
use peftkit_core::{Error, Result};

#[derive(clap::Args, Clone, Debug)]
pub struct SynthArgs {
    /// JSON corpus configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the WAV files and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the corpus seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", args.config.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    if args.seed.is_none() && value.get("seed").is_none() {
        return Err(Error::Config(
            "seed is mandatory: set \"seed\" in the config or pass --seed".into(),
        ));
    }
    let mut cfg: SynthConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let entries = synthesize_dataset(&cfg, &args.out)?;
    println!("clips={} out={}", entries.len(), args.out.display());
    Ok(())
}
