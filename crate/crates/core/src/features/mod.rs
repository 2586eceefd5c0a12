//! Audio front end and handcrafted-feature pipeline.
//!
//! This module owns the path from raw waveform to model input: resampling
//! to 16 kHz, padding or truncating to a uniform duration, log-Mel
//! spectrograms for the encoder, an 88-dimensional functional feature
//! vector for the classical baselines, and PCA for dimensionality
//! reduction. Everything is pure and deterministic.

pub mod functionals;
pub mod logmel;
pub mod pca;

pub use functionals::{feature_names, functional_features, FEATURE_DIM};
pub use logmel::{log_mel, LogMel, LogMelExtractor};
pub use pca::{pca_fit, pca_transform, PcaModel, Standardizer};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Every downstream stage assumes this rate.
pub const TARGET_RATE: u32 = 16000;
/// Analysis window length in samples (25 ms at 16 kHz).
pub const WIN: usize = 400;
/// Hop length in samples (10 ms at 16 kHz).
pub const HOP: usize = 160;
/// FFT size; frames are zero-padded from WIN up to this.
pub const N_FFT: usize = 512;
/// One-sided spectrum size for N_FFT.
pub const N_BINS: usize = N_FFT / 2 + 1;
/// Energy floor applied before every natural log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono waveform with its sample rate. Samples must be finite and within
/// [-1, 1], the range a PCM decode produces.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Rate("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Data("clip has no samples".into()));
        }
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Data(format!("non-finite sample at index {i}")));
            }
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::Data(format!(
                    "sample {s} at index {i} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Zeroth-order modified Bessel function of the first kind, by its power
/// series; converges fast for the argument range a Kaiser window uses.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling to 16 kHz with a 64-tap Kaiser-windowed sinc
/// (beta 8.6, cutoff at the narrower of the two Nyquist frequencies). Taps
/// are renormalized per output sample so passband DC gain is exactly one;
/// samples beyond the clip edges are treated as zeros. Already-16 kHz input
/// is returned untouched.
pub fn resample_to_16k(clip: &AudioClip) -> Result<AudioClip> {
    let rate = clip.sample_rate;
    if !(8000..=96000).contains(&rate) {
        return Err(Error::Rate(format!(
            "source rate {rate} Hz outside the supported 8000..=96000 range"
        )));
    }
    if rate == TARGET_RATE {
        return Ok(clip.clone());
    }
    const HALF: isize = 32;
    const BETA: f64 = 8.6;
    let n_in = clip.samples.len() as isize;
    let out_len = ((clip.samples.len() as f64) * TARGET_RATE as f64 / rate as f64)
        .round()
        .max(1.0) as usize;
    let step = rate as f64 / TARGET_RATE as f64;
    let cutoff = (TARGET_RATE as f64 / rate as f64).min(1.0);
    let i0_beta = bessel_i0(BETA);
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 * step;
        let k0 = t.floor() as isize;
        let mut acc = 0.0;
        let mut weight_sum = 0.0;
        for k in (k0 - HALF + 1)..=(k0 + HALF) {
            let u = t - k as f64;
            let w_arg = u / HALF as f64;
            if w_arg.abs() >= 1.0 {
                continue;
            }
            let window = bessel_i0(BETA * (1.0 - w_arg * w_arg).sqrt()) / i0_beta;
            let h = cutoff * sinc(cutoff * u) * window;
            weight_sum += h;
            if (0..n_in).contains(&k) {
                acc += h * clip.samples[k as usize];
            }
        }
        let v = if weight_sum.abs() > 1e-12 { acc / weight_sum } else { 0.0 };
        // Windowed-sinc interpolation can overshoot near full-scale input;
        // keep the clip contract intact.
        out.push(v.clamp(-1.0, 1.0));
    }
    AudioClip::new(out, TARGET_RATE)
}

/// Zero-pads at the end or truncates the tail so the clip lasts exactly
/// `duration_s` seconds at 16 kHz.
pub fn pad_or_truncate(clip: &AudioClip, duration_s: f64) -> Result<AudioClip> {
    if clip.sample_rate != TARGET_RATE {
        return Err(Error::Rate(format!(
            "pad_or_truncate expects {TARGET_RATE} Hz input, got {}",
            clip.sample_rate
        )));
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Config(format!("target duration {duration_s} s invalid")));
    }
    let target = (duration_s * TARGET_RATE as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(target, 0.0);
    AudioClip::new(samples, TARGET_RATE)
}

/// Shared framing front end: periodic 400-point Hann window, hop 160,
/// zero-padded 512-point FFT, one-sided power spectrum (257 bins) per
/// frame. Errors when the signal is shorter than one window.
pub(crate) fn framed_power_spectra(samples: &[f64]) -> Result<Vec<Vec<f64>>> {
    if samples.len() < WIN {
        return Err(Error::Length(format!(
            "{} samples, need at least {WIN} for one analysis frame",
            samples.len()
        )));
    }
    let n_frames = 1 + (samples.len() - WIN) / HOP;
    let window: Vec<f64> = (0..WIN)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / WIN as f64).cos()))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(N_FFT);
    let mut spectra = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for f in 0..n_frames {
        let start = f * HOP;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < WIN { samples[start + i] * window[i] } else { 0.0 };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        spectra.push(buf[..N_BINS].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(spectra)
}

/// Frequency of one-sided FFT bin `k` at the target rate.
pub(crate) fn bin_hz(k: usize) -> f64 {
    k as f64 * TARGET_RATE as f64 / N_FFT as f64
}
