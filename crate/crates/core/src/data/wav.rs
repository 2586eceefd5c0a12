//! Minimal RIFF/WAVE reader and writer for 16-bit PCM mono, the only
//! on-disk audio format the toolkit produces or accepts.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::AudioClip;

/// Encodes a sample to PCM16: scale by 32768, round, saturate.
fn to_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a clip as a 16-bit PCM mono WAV file.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + n * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&clip.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        bytes.extend_from_slice(&to_i16(s).to_le_bytes());
    }
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn le_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Reads a 16-bit PCM mono WAV file. Anything else (float encodings,
/// multi-channel audio, other bit depths, malformed containers) is
/// rejected with the offending path in the message.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let fail = |what: &str| -> Error {
        Error::Format(format!("{}: {what}", path.display()))
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        let head = hex(&bytes[..bytes.len().min(12)]);
        return Err(fail(&format!("not a RIFF/WAVE file (header bytes {head})")));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12usize;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = le_u32(&bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or_else(|| fail("chunk size overflows"))?;
        if body_end > bytes.len() {
            return Err(fail(&format!(
                "chunk {:?} claims {size} bytes but the file ends early",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail("fmt chunk too small"));
                }
                fmt = Some((
                    le_u16(&bytes, body_start),
                    le_u16(&bytes, body_start + 2),
                    le_u32(&bytes, body_start + 4),
                    le_u16(&bytes, body_start + 14),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        at = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| fail("missing fmt chunk"))?;
    if format == 3 {
        return Err(fail("IEEE float WAV is not supported, expected 16-bit PCM"));
    }
    if format != 1 {
        return Err(fail(&format!("unsupported WAV format code {format}, expected PCM (1)")));
    }
    if channels != 1 {
        return Err(fail(&format!("{channels} channels, expected mono")));
    }
    if bits != 16 {
        return Err(fail(&format!("{bits} bits per sample, expected 16")));
    }
    let data = data.ok_or_else(|| fail("missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(fail("data chunk has an odd byte count"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f64 / 32768.0)
        .collect();
    if samples.is_empty() {
        return Err(fail("data chunk is empty"));
    }
    AudioClip::new(samples, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_round_trip_is_within_half_a_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples = vec![-1.0, -0.5, 0.0, 0.25, 0.999, 1.0 - 1.0 / 32768.0];
        let clip = AudioClip::new(samples.clone(), 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), samples.len());
        // Full-scale negative encodes exactly.
        assert_eq!(back.samples[0], -1.0);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12, "{a} came back as {b}");
        }
    }

    #[test]
    fn positive_full_scale_saturates_to_the_top_code() {
        assert_eq!(to_i16(1.0), 32767);
        assert_eq!(to_i16(-1.0), -32768);
        assert_eq!(to_i16(0.0), 0);
    }

    #[test]
    fn garbage_header_reports_path_and_hex() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.wav");
        std::fs::write(&path, b"NOTAWAVEFILE....").unwrap();
        let err = read_wav(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("junk.wav"), "path missing: {msg}");
        // Hex of "NOTAWAVEFILE".
        assert!(msg.contains("4e4f544157415645"), "hex dump missing: {msg}");
    }

    #[test]
    fn float_wavs_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let clip = AudioClip::new(vec![0.1; 64], 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Flip the format code at offset 20 to IEEE float.
        bytes[20] = 3;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_wav(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("float"), "{msg}");
        assert!(msg.contains("float.wav"), "{msg}");
    }

    #[test]
    fn stereo_and_wrong_depth_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = AudioClip::new(vec![0.1; 64], 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut stereo = good.clone();
        stereo[22] = 2;
        std::fs::write(&path, &stereo).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(m)) if m.contains("channels")));

        let mut deep = good.clone();
        deep[34] = 32;
        std::fs::write(&path, &deep).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(m)) if m.contains("bits")));
    }

    #[test]
    fn truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.wav");
        let clip = AudioClip::new(vec![0.1; 64], 16000).unwrap();
        write_wav(&path, &clip).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..50]).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(_))));
    }
}
