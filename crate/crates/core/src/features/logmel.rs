//! Log-Mel spectrogram extraction.
//!
//! HTK-style Mel scale (2595 log10(1 + f/700)), 80 triangular filters with
//! unit peak spanning 0 to 8 kHz, applied to the shared 400/160/512 power
//! spectrogram, then a natural log with a 1e-10 floor. One second of
//! 16 kHz audio yields 98 frames.

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

use super::{bin_hz, framed_power_spectra, AudioClip, LOG_FLOOR, N_BINS, TARGET_RATE};

/// Default number of Mel bands.
pub const N_MELS: usize = 80;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-Mel features for one clip: `frames` is T x n_mels, frame t row t.
#[derive(Clone, Debug)]
pub struct LogMel {
    pub frames: Tensor,
    pub n_mels: usize,
}

impl LogMel {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// Precomputed triangular filter bank. Each filter is stored sparsely as
/// (bin, weight) pairs over the one-sided spectrum.
pub struct LogMelExtractor {
    n_mels: usize,
    filters: Vec<Vec<(usize, f64)>>,
    centers_hz: Vec<f64>,
}

impl LogMelExtractor {
    pub fn new(n_mels: usize) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        let f_max = TARGET_RATE as f64 / 2.0;
        let mel_max = hz_to_mel(f_max);
        // n_mels + 2 equally spaced Mel points delimit the triangles.
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            let mut taps = Vec::new();
            for k in 0..N_BINS {
                let f = bin_hz(k);
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    taps.push((k, w));
                }
            }
            filters.push(taps);
        }
        let centers_hz = edges_hz[1..=n_mels].to_vec();
        Ok(Self { n_mels, filters, centers_hz })
    }

    /// Triangle peak frequencies, mainly useful for relating band indices
    /// back to Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<LogMel> {
        if clip.sample_rate != TARGET_RATE {
            return Err(Error::Rate(format!(
                "log-Mel extraction expects {TARGET_RATE} Hz input, got {}",
                clip.sample_rate
            )));
        }
        let spectra = framed_power_spectra(&clip.samples)?;
        let t = spectra.len();
        let mut data = Vec::with_capacity(t * self.n_mels);
        for frame in &spectra {
            for taps in &self.filters {
                let e: f64 = taps.iter().map(|&(k, w)| w * frame[k]).sum();
                data.push(e.max(LOG_FLOOR).ln());
            }
        }
        Ok(LogMel {
            frames: Tensor::new(&[t, self.n_mels], data)?,
            n_mels: self.n_mels,
        })
    }
}

/// One-call convenience wrapper around [`LogMelExtractor`].
pub fn log_mel(clip: &AudioClip, n_mels: usize) -> Result<LogMel> {
    LogMelExtractor::new(n_mels)?.compute(clip)
}
