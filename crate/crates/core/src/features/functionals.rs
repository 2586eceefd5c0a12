//! Handcrafted functional features for the classical baselines.
//!
//! Fourteen frame-level descriptors are computed on the shared 400/160
//! framing, then summarized by six functionals each, followed by four
//! clip-level values, for 88 dimensions total. Index layout, with
//! `base = lld * 6` and functional order [mean, std, p20, p50, p80, range]:
//!
//! | lld | base | descriptor                             |
//! |-----|------|----------------------------------------|
//! | 0   | 0    | log frame energy                       |
//! | 1   | 6    | delta log energy                       |
//! | 2   | 12   | zero-crossing rate                     |
//! | 3   | 18   | F0 (autocorrelation, voiced only)      |
//! | 4   | 24   | delta F0 (voiced only)                 |
//! | 5   | 30   | spectral centroid                      |
//! | 6   | 36   | spectral spread                        |
//! | 7   | 42   | spectral slope                         |
//! | 8   | 48   | spectral flux                          |
//! | 9   | 54   | 85% rolloff frequency                  |
//! | 10  | 60   | cepstral-like coefficient 1            |
//! | 11  | 66   | cepstral-like coefficient 2            |
//! | 12  | 72   | cepstral-like coefficient 3            |
//! | 13  | 78   | cepstral-like coefficient 4            |
//!
//! followed by 84 voicing fraction, 85 log RMS of the raw samples,
//! 86 long-term spectral flatness, 87 active-frame fraction.

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

use super::{bin_hz, framed_power_spectra, AudioClip, HOP, LOG_FLOOR, N_BINS, TARGET_RATE, WIN};

/// Total feature dimension.
pub const FEATURE_DIM: usize = 88;

const N_LLDS: usize = 14;
const N_FUNCTIONALS: usize = 6;

/// Normalized autocorrelation threshold for a frame to count as voiced.
const VOICING_ACF_MIN: f64 = 0.30;
/// Log-energy gate for voicing; quiet frames never count as voiced.
const VOICING_ENERGY_MIN: f64 = -18.0;
/// Log-energy gate for the active-frame fraction.
const ACTIVE_ENERGY_MIN: f64 = -12.0;
/// F0 search range in lags: 40 samples = 400 Hz, 266 samples = 60 Hz.
const F0_LAG_MIN: usize = 40;
const F0_LAG_MAX: usize = 266;
/// Cepstral-like coefficients: DCT-II over 8 band log energies of 32 bins
/// each (the 256 non-DC bins).
const N_CEP_BANDS: usize = 8;
const CEP_BAND_BINS: usize = 32;

const LLD_NAMES: [&str; N_LLDS] = [
    "log_energy",
    "delta_log_energy",
    "zcr",
    "f0",
    "delta_f0",
    "spectral_centroid",
    "spectral_spread",
    "spectral_slope",
    "spectral_flux",
    "rolloff85",
    "cep1",
    "cep2",
    "cep3",
    "cep4",
];
const FUNC_NAMES: [&str; N_FUNCTIONALS] = ["mean", "std", "p20", "p50", "p80", "range"];

/// Human-readable name for every feature index, in order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_DIM);
    for lld in LLD_NAMES {
        for func in FUNC_NAMES {
            names.push(format!("{lld}_{func}"));
        }
    }
    for clip in ["voicing_fraction", "log_rms", "ltas_flatness", "active_fraction"] {
        names.push(clip.to_string());
    }
    names
}

struct FrameLlds {
    values: Vec<[f64; N_LLDS]>,
    voiced: Vec<bool>,
}

fn autocorr(frame: &[f64], lag: usize) -> f64 {
    frame[..frame.len() - lag]
        .iter()
        .zip(&frame[lag..])
        .map(|(a, b)| a * b)
        .sum()
}

/// F0 estimate for one frame: peak of the unnormalized autocorrelation in
/// the 60..400 Hz lag range, refined by parabolic interpolation. Returns
/// (f0_hz, voiced).
fn frame_f0(frame: &[f64], log_energy: f64) -> (f64, bool) {
    let r0 = autocorr(frame, 0);
    if r0 <= 0.0 || log_energy <= VOICING_ENERGY_MIN {
        return (0.0, false);
    }
    let mut best_lag = F0_LAG_MIN;
    let mut best = f64::NEG_INFINITY;
    for lag in F0_LAG_MIN..=F0_LAG_MAX {
        let r = autocorr(frame, lag);
        if r > best {
            best = r;
            best_lag = lag;
        }
    }
    if best / r0 < VOICING_ACF_MIN {
        return (0.0, false);
    }
    // Parabolic vertex through the peak and its neighbors sharpens the lag
    // below one sample.
    let mut lag = best_lag as f64;
    if best_lag > F0_LAG_MIN && best_lag < F0_LAG_MAX {
        let (rm, rp) = (autocorr(frame, best_lag - 1), autocorr(frame, best_lag + 1));
        let denom = rm - 2.0 * best + rp;
        if denom.abs() > 1e-30 {
            let delta = 0.5 * (rm - rp) / denom;
            if delta.abs() <= 1.0 {
                lag += delta;
            }
        }
    }
    (TARGET_RATE as f64 / lag, true)
}

fn compute_llds(samples: &[f64], spectra: &[Vec<f64>]) -> FrameLlds {
    let n_frames = spectra.len();
    let mut values = vec![[0.0; N_LLDS]; n_frames];
    let mut voiced = vec![false; n_frames];
    for t in 0..n_frames {
        let frame = &samples[t * HOP..t * HOP + WIN];
        let p = &spectra[t];
        let mut lld = [0.0; N_LLDS];

        let power = frame.iter().map(|x| x * x).sum::<f64>() / WIN as f64;
        let log_energy = power.max(LOG_FLOOR).ln();
        lld[0] = log_energy;

        lld[2] = frame
            .windows(2)
            .filter(|w| w[0] * w[1] < 0.0)
            .count() as f64
            / (WIN - 1) as f64;

        let (f0, is_voiced) = frame_f0(frame, log_energy);
        lld[3] = f0;
        voiced[t] = is_voiced;

        let total: f64 = p.iter().sum();
        if total > 0.0 {
            let centroid = p
                .iter()
                .enumerate()
                .map(|(k, &pk)| bin_hz(k) * pk)
                .sum::<f64>()
                / total;
            lld[5] = centroid;
            lld[6] = (p
                .iter()
                .enumerate()
                .map(|(k, &pk)| {
                    let d = bin_hz(k) - centroid;
                    d * d * pk
                })
                .sum::<f64>()
                / total)
                .sqrt();
            let mut acc = 0.0;
            for (k, &pk) in p.iter().enumerate() {
                acc += pk;
                if acc >= 0.85 * total {
                    lld[9] = bin_hz(k);
                    break;
                }
            }
        }

        // Least-squares slope of log power against Hz over the non-DC bins.
        let ys: Vec<f64> = (1..N_BINS).map(|k| p[k].max(LOG_FLOOR).ln()).collect();
        let xs: Vec<f64> = (1..N_BINS).map(bin_hz).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        lld[7] = sxy / sxx;

        if t > 0 {
            lld[1] = log_energy - values[t - 1][0];
            lld[8] = p
                .iter()
                .zip(&spectra[t - 1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }

        let mut bands = [0.0; N_CEP_BANDS];
        for (b, band) in bands.iter_mut().enumerate() {
            let start = 1 + b * CEP_BAND_BINS;
            let e: f64 = p[start..start + CEP_BAND_BINS].iter().sum();
            *band = e.max(LOG_FLOOR).ln();
        }
        for j in 1..=4 {
            lld[9 + j] = bands
                .iter()
                .enumerate()
                .map(|(b, &e)| {
                    e * (std::f64::consts::PI * j as f64 * (b as f64 + 0.5)
                        / N_CEP_BANDS as f64)
                        .cos()
                })
                .sum();
        }
        values[t] = lld;
    }
    // Delta F0 uses pairs of voiced frames; everything else stays zero.
    for t in 1..n_frames {
        if voiced[t] && voiced[t - 1] {
            values[t][4] = values[t][3] - values[t - 1][3];
        }
    }
    FrameLlds { values, voiced }
}

/// Percentile by linear interpolation between the closest ranks. `vals`
/// must be sorted and non-empty.
fn percentile(vals: &[f64], q: f64) -> f64 {
    let h = q * (vals.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(vals.len() - 1);
    vals[lo] + (h - lo as f64) * (vals[hi] - vals[lo])
}

/// Six functionals of one descriptor track; an empty track yields zeros.
fn summarize(track: &[f64]) -> [f64; N_FUNCTIONALS] {
    if track.is_empty() {
        return [0.0; N_FUNCTIONALS];
    }
    let n = track.len() as f64;
    let mean = track.iter().sum::<f64>() / n;
    let var = track.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = track.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [
        mean,
        var.sqrt(),
        percentile(&sorted, 0.20),
        percentile(&sorted, 0.50),
        percentile(&sorted, 0.80),
        sorted[sorted.len() - 1] - sorted[0],
    ]
}

/// Computes the 88-dimensional functional feature vector for a clip.
/// Requires 16 kHz input of at least half a second.
pub fn functional_features(clip: &AudioClip) -> Result<Tensor> {
    if clip.sample_rate != TARGET_RATE {
        return Err(Error::Rate(format!(
            "functional features expect {TARGET_RATE} Hz input, got {}",
            clip.sample_rate
        )));
    }
    if clip.samples.len() < 8000 {
        return Err(Error::Length(format!(
            "clip has {} samples, need at least 8000 (0.5 s)",
            clip.samples.len()
        )));
    }
    let spectra = framed_power_spectra(&clip.samples)?;
    let llds = compute_llds(&clip.samples, &spectra);
    let n_frames = llds.values.len();

    let mut out = Vec::with_capacity(FEATURE_DIM);
    for lld in 0..N_LLDS {
        // F0 statistics only make sense over voiced frames.
        let track: Vec<f64> = if lld == 3 || lld == 4 {
            llds.values
                .iter()
                .zip(&llds.voiced)
                .filter(|(_, &v)| v)
                .map(|(row, _)| row[lld])
                .collect()
        } else {
            llds.values.iter().map(|row| row[lld]).collect()
        };
        out.extend(summarize(&track));
    }

    let n_voiced = llds.voiced.iter().filter(|&&v| v).count();
    out.push(n_voiced as f64 / n_frames as f64);
    let rms = (clip.samples.iter().map(|x| x * x).sum::<f64>() / clip.samples.len() as f64)
        .sqrt();
    out.push(rms.max(LOG_FLOOR).ln());
    // Long-term average spectrum flatness: geometric over arithmetic mean
    // of the per-bin mean power.
    let mut ltas = vec![0.0; N_BINS];
    for frame in &spectra {
        for (slot, &pk) in ltas.iter_mut().zip(frame) {
            *slot += pk;
        }
    }
    for slot in &mut ltas {
        *slot /= n_frames as f64;
    }
    let geo = (ltas.iter().map(|&p| p.max(LOG_FLOOR).ln()).sum::<f64>() / N_BINS as f64).exp();
    let arith = ltas.iter().sum::<f64>() / N_BINS as f64;
    out.push(geo / arith.max(LOG_FLOOR));
    let n_active = llds
        .values
        .iter()
        .filter(|row| row[0] > ACTIVE_ENERGY_MIN)
        .count();
    out.push(n_active as f64 / n_frames as f64);

    Tensor::new(&[FEATURE_DIM], out)
}
