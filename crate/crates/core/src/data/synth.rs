//! Synthetic vowel corpus with a controllable severity axis.
//!
//! Clips are built with a small source-filter model: a band-limited-ish
//! sawtooth source with vibrato and jitter, two gliding vowel formant
//! resonators (a slow diphthong, so clip-level spectral statistics smear),
//! and three severity-linked effects layered on top: a low nasal resonance
//! around 250 Hz, a spectral notch near 950 Hz, and broadband aspiration
//! noise. Class 0 is unaffected; higher classes get stronger settings of
//! all three knobs, with per-clip multiplicative spread so no single global
//! statistic separates neighboring classes cleanly.
//!
//! Generation is deterministic: clip `i` of a run depends only on the
//! config seed and `i`, never on generation order.

use std::f64::consts::PI;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AudioClip, TARGET_RATE};

use super::{save_manifest, wav, ManifestEntry, Split};

/// Peak level clips are normalized to before the random loudness draw.
const PEAK_LEVEL: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Clips generated per class.
    pub n_per_class: usize,
    /// Clip duration in seconds.
    pub duration_s: f64,
    /// Corpus seed; every clip derives its own stream from it.
    pub seed: u64,
    /// Fundamental frequency range, sampled uniformly per clip.
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Per-class gain of the ~250 Hz nasal resonance.
    pub nasal_gain: Vec<f64>,
    /// Per-class depth of the ~950 Hz notch, in [0, 1].
    pub notch_depth: Vec<f64>,
    /// Per-class aspiration noise level relative to the voiced RMS.
    pub aspiration_gain: Vec<f64>,
    /// Multiplicative per-clip spread applied to the severity knobs; 1.0
    /// disables it.
    pub level_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 50,
            duration_s: 3.0,
            seed: 0,
            f0_min_hz: 120.0,
            f0_max_hz: 260.0,
            nasal_gain: vec![0.0, 0.15, 0.35, 0.6],
            notch_depth: vec![0.0, 0.3, 0.6, 0.9],
            aspiration_gain: vec![0.01, 0.05, 0.10, 0.18],
            level_spread: 1.5,
        }
    }
}

impl SynthConfig {
    pub fn n_classes(&self) -> usize {
        self.nasal_gain.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 5 {
            return Err(Error::Config(format!(
                "n_per_class {} too small to split 60/20/20",
                self.n_per_class
            )));
        }
        if !(self.duration_s >= 0.5) || !self.duration_s.is_finite() {
            return Err(Error::Config(format!(
                "duration {} s, need at least 0.5",
                self.duration_s
            )));
        }
        if !(self.f0_min_hz >= 60.0 && self.f0_max_hz <= 400.0 && self.f0_min_hz < self.f0_max_hz)
        {
            return Err(Error::Config(format!(
                "F0 range [{}, {}] must sit inside [60, 400]",
                self.f0_min_hz, self.f0_max_hz
            )));
        }
        let c = self.n_classes();
        if c < 2 {
            return Err(Error::Config(format!("{c} classes, need at least 2")));
        }
        for (name, levels) in [
            ("nasal_gain", &self.nasal_gain),
            ("notch_depth", &self.notch_depth),
            ("aspiration_gain", &self.aspiration_gain),
        ] {
            if levels.len() != c {
                return Err(Error::Config(format!(
                    "{name} has {} levels, expected {c}",
                    levels.len()
                )));
            }
            if levels.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config(format!(
                    "{name} levels {levels:?} must be non-decreasing in severity"
                )));
            }
            if levels.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::Config(format!("{name} levels {levels:?} must be >= 0")));
            }
        }
        if !(self.level_spread >= 1.0) || !self.level_spread.is_finite() {
            return Err(Error::Config(format!(
                "level_spread {} must be >= 1",
                self.level_spread
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-clip seed derived from the corpus seed and clip index.
pub fn clip_seed(corpus_seed: u64, clip_index: u64) -> u64 {
    splitmix64(corpus_seed ^ splitmix64(clip_index))
}

/// Two-pole resonator with unity gain at its center frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(center_hz: f64, bandwidth_hz: f64) -> Self {
        let mut res = Self { a1: 0.0, a2: 0.0, g: 0.0, y1: 0.0, y2: 0.0 };
        res.retune(center_hz, bandwidth_hz);
        res
    }

    /// Recomputes coefficients for a new center, keeping filter state so a
    /// gliding formant stays click-free.
    fn retune(&mut self, center_hz: f64, bandwidth_hz: f64) {
        let sr = TARGET_RATE as f64;
        let r = (-PI * bandwidth_hz / sr).exp();
        let w = 2.0 * PI * center_hz / sr;
        // Peak gain normalization for the two-pole section.
        self.g = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * w).cos() + r * r).sqrt();
        self.a1 = 2.0 * r * w.cos();
        self.a2 = -(r * r);
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Biquad notch normalized to unity DC gain.
struct Notch {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Notch {
    fn new(center_hz: f64, rho: f64) -> Self {
        let w = 2.0 * PI * center_hz / TARGET_RATE as f64;
        let k = (1.0 - 2.0 * rho * w.cos() + rho * rho) / (2.0 - 2.0 * w.cos());
        Self {
            b0: k,
            b1: -2.0 * k * w.cos(),
            b2: k,
            a1: 2.0 * rho * w.cos(),
            a2: -(rho * rho),
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b1 * self.x1 + self.b2 * self.x2 + self.a1 * self.y1
            + self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Synthesizes one clip of the given class from an explicit clip seed.
pub fn synthesize_clip(cfg: &SynthConfig, class: usize, clip_seed: u64) -> Result<AudioClip> {
    cfg.validate()?;
    if class >= cfg.n_classes() {
        return Err(Error::Label(format!(
            "class {class} out of range for {} classes",
            cfg.n_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
    let sr = TARGET_RATE as f64;
    let n = (cfg.duration_s * sr).round() as usize;

    let f0: f64 = rng.random_range(cfg.f0_min_hz..cfg.f0_max_hz);
    let vibrato_rate: f64 = rng.random_range(4.0..6.0);
    let vibrato_depth = 0.01;
    let jitter_depth = 0.005;
    // Formants glide between independent endpoints, like a slow diphthong;
    // utterance-level spectral statistics smear while any single frame keeps
    // a clean spectral picture.
    let f1_start: f64 = rng.random_range(500.0..850.0);
    let f1_end: f64 = rng.random_range(500.0..850.0);
    let f2_start: f64 = rng.random_range(1200.0..2200.0);
    let f2_end: f64 = rng.random_range(1200.0..2200.0);
    let nasal_hz: f64 = rng.random_range(235.0..265.0);
    let notch_hz: f64 = rng.random_range(850.0..1050.0);
    // Severity knobs get a log-uniform per-clip spread so neighboring
    // classes overlap partially.
    let spread = cfg.level_spread.max(1.0).ln();
    let mut draw_level = |base: f64| -> f64 {
        let factor = rng.random_range(-spread..=spread).exp();
        base * factor
    };
    let nasal_gain = draw_level(cfg.nasal_gain[class]);
    let notch_depth = draw_level(cfg.notch_depth[class]).min(1.0);
    let aspiration = draw_level(cfg.aspiration_gain[class]);
    let loudness: f64 = rng.random_range(0.6..1.0);

    // Sawtooth source with vibrato and per-period jitter, softened by a
    // one-pole lowpass to pull energy toward the harmonics a voice has.
    let mut phase = 0.0f64;
    let mut jitter = 0.0f64;
    let mut lp = 0.0f64;
    let mut source = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + vibrato_depth * (2.0 * PI * vibrato_rate * t).sin() + jitter);
        phase += f / sr;
        if phase >= 1.0 {
            phase -= 1.0;
            jitter = rng.random_range(-jitter_depth..=jitter_depth);
        }
        let saw = 2.0 * phase - 1.0;
        lp += 0.6 * (saw - lp);
        source.push(lp);
    }

    let mut res1 = Resonator::new(f1_start, 80.0);
    let mut res2 = Resonator::new(f2_start, 120.0);
    let mut nasal = Resonator::new(nasal_hz, 40.0);
    // 10 ms retune blocks are small enough that the glide stays smooth.
    let glide_block = (sr * 0.01) as usize;
    let mut voiced = Vec::with_capacity(n);
    for (i, &s) in source.iter().enumerate() {
        if i % glide_block == 0 && n > 1 {
            let frac = i as f64 / (n - 1) as f64;
            res1.retune(f1_start + (f1_end - f1_start) * frac, 80.0);
            res2.retune(f2_start + (f2_end - f2_start) * frac, 120.0);
        }
        voiced.push(res1.process(s) + 0.7 * res2.process(s) + nasal_gain * nasal.process(s));
    }

    let mut notch = Notch::new(notch_hz, 0.95);
    let mut mixed: Vec<f64> = voiced
        .iter()
        .map(|&v| (1.0 - notch_depth) * v + notch_depth * notch.process(v))
        .collect();

    let rms = (mixed.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let mut hp_prev = 0.0f64;
    for v in &mut mixed {
        // First-difference shaping tilts the noise toward high frequencies.
        let white: f64 = rng.random_range(-1.0..1.0);
        let shaped = white - 0.7 * hp_prev;
        hp_prev = white;
        *v += aspiration * rms * shaped;
    }

    // Short raised-cosine fades avoid onset clicks.
    let fade = (sr * 0.01) as usize;
    for i in 0..fade.min(n) {
        let w = 0.5 * (1.0 - (PI * i as f64 / fade as f64).cos());
        mixed[i] *= w;
        mixed[n - 1 - i] *= w;
    }

    let peak = mixed.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak <= 0.0 {
        return Err(Error::Degenerate("synthesized clip is all zeros".into()));
    }
    let scale = PEAK_LEVEL / peak * loudness;
    for v in &mut mixed {
        *v *= scale;
    }
    AudioClip::new(mixed, TARGET_RATE)
}

/// Generates the full corpus under `out_dir`: one WAV per clip plus a
/// `manifest.jsonl`, split 60/20/20 per class into train, dev, and test
/// in index order.
pub fn synthesize_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let n = cfg.n_per_class;
    let n_train = n * 6 / 10;
    let n_dev = n * 2 / 10;
    let mut entries = Vec::with_capacity(cfg.n_classes() * n);
    for class in 0..cfg.n_classes() {
        for i in 0..n {
            let global = (class * n + i) as u64;
            let clip = synthesize_clip(cfg, class, clip_seed(cfg.seed, global))?;
            let id = format!("clip{global:04}");
            let path = format!("{id}.wav");
            wav::write_wav(out_dir.join(&path), &clip)?;
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
            entries.push(ManifestEntry { id, path, label: class, split });
        }
    }
    save_manifest(out_dir.join("manifest.jsonl"), &entries)?;
    Ok(entries)
}
