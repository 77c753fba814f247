//! Minimal RIFF WAV reader/writer: mono PCM 16-bit little-endian and 32-bit
//! IEEE float. Resampling is out of scope; callers that need a specific rate
//! must reject mismatches themselves.

use std::io::{Read, Write};
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

/// Sample encodings supported by [`write`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    /// 16-bit signed PCM.
    Pcm16,
    /// 32-bit IEEE float.
    Float32,
}

fn wav_err(msg: impl Into<String>) -> Error {
    Error::Wav(msg.into())
}

/// Read a mono WAV file. Accepts PCM 16-bit and IEEE float 32-bit.
pub fn read(path: impl AsRef<Path>) -> Result<AudioClip> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    read_bytes(&bytes)
}

/// Parse a mono WAV from memory.
pub fn read_bytes(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err("not a RIFF/WAVE file"));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| wav_err("chunk overflow"))?;
        if body_end > bytes.len() {
            return Err(wav_err("truncated chunk"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err("fmt chunk too small"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| wav_err("missing fmt chunk"))?;
    let data = data.ok_or_else(|| wav_err("missing data chunk"))?;
    if channels != 1 {
        return Err(wav_err(format!("only mono supported, file has {channels} channels")));
    }

    let samples = match (format, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (f, b) => {
            return Err(wav_err(format!(
                "unsupported encoding: format tag {f}, {b} bits (need PCM16 or float32)"
            )))
        }
    };
    AudioClip::new(samples, rate)
}

/// Write a mono WAV file in the given encoding. PCM samples are clamped to
/// [-1, 1] before quantization.
pub fn write(path: impl AsRef<Path>, clip: &AudioClip, format: SampleFormat) -> Result<()> {
    let bytes = to_bytes(clip, format);
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Encode a mono WAV into memory.
pub fn to_bytes(clip: &AudioClip, format: SampleFormat) -> Vec<u8> {
    let (format_tag, bits): (u16, u16) = match format {
        SampleFormat::Pcm16 => (1, 16),
        SampleFormat::Float32 => (3, 32),
    };
    let bytes_per_sample = (bits / 8) as u32;
    let data_len = clip.samples.len() as u32 * bytes_per_sample;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * bytes_per_sample).to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());

    match format {
        SampleFormat::Pcm16 => {
            for s in &clip.samples {
                let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        SampleFormat::Float32 => {
            for s in &clip.samples {
                out.extend_from_slice(&(*s as f32).to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float32_roundtrip_preserves_f32_values() {
        let clip = AudioClip::new(vec![0.0, 0.5, -0.25, 1.0e-3], 16_000).unwrap();
        let bytes = to_bytes(&clip, SampleFormat::Float32);
        let back = read_bytes(&bytes).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pcm16_roundtrip_quantizes() {
        let clip = AudioClip::new(vec![0.0, 0.5, -0.5], 8_000).unwrap();
        let bytes = to_bytes(&clip, SampleFormat::Pcm16);
        let back = read_bytes(&bytes).unwrap();
        assert_eq!(back.sample_rate, 8_000);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn rejects_stereo() {
        let clip = AudioClip::new(vec![0.0; 4], 16_000).unwrap();
        let mut bytes = to_bytes(&clip, SampleFormat::Pcm16);
        bytes[22] = 2; // channel count
        assert!(matches!(read_bytes(&bytes), Err(Error::Wav(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_bytes(b"not a wav"), Err(Error::Wav(_))));
    }
}
