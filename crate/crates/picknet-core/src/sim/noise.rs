//! Ambient and transient noise generation and SNR-controlled mixing.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

/// Hoth ambient-noise spectrum: (Hz, relative dB). Roughly flat at low
/// frequencies, falling about 5 dB per octave above 500 Hz.
pub const HOTH_TABLE: &[(f64, f64)] = &[
    (100.0, 32.4),
    (125.0, 30.9),
    (160.0, 29.1),
    (200.0, 27.6),
    (250.0, 26.0),
    (315.0, 24.4),
    (400.0, 22.9),
    (500.0, 21.1),
    (630.0, 19.5),
    (800.0, 17.8),
    (1000.0, 16.2),
    (1250.0, 14.6),
    (1600.0, 12.9),
    (2000.0, 11.3),
    (2500.0, 9.6),
    (3150.0, 7.8),
    (4000.0, 5.4),
    (5000.0, 2.6),
    (6300.0, -1.3),
    (8000.0, -6.6),
];

/// Interpolate the band table at `f` Hz, linear in log-frequency, clamped
/// at both ends.
fn table_db(table: &[(f64, f64)], f: f64) -> f64 {
    if f <= table[0].0 {
        return table[0].1;
    }
    let last = table[table.len() - 1];
    if f >= last.0 {
        return last.1;
    }
    let lf = f.ln();
    for pair in table.windows(2) {
        let (f0, d0) = pair[0];
        let (f1, d1) = pair[1];
        if f <= f1 {
            let a = (lf - f0.ln()) / (f1.ln() - f0.ln());
            return d0 + a * (d1 - d0);
        }
    }
    last.1
}

/// Standard-normal draws via Box-Muller.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Hoth-shaped ambient noise with unit RMS, bitwise deterministic per seed.
pub fn hoth_noise(length: usize, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    hoth_noise_with_table(length, sample_rate, seed, HOTH_TABLE)
}

/// [`hoth_noise`] with a caller-provided octave-band dB table.
pub fn hoth_noise_with_table(
    length: usize,
    sample_rate: u32,
    seed: u64,
    table: &[(f64, f64)],
) -> Result<AudioClip> {
    if length == 0 {
        return Err(Error::InvalidInput("noise length must be positive".into()));
    }
    if table.is_empty() {
        return Err(Error::InvalidInput("noise shape table is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = length.next_power_of_two().max(2);
    let mut buf: Vec<Complex64> = (0..size)
        .map(|_| Complex64::new(gaussian(&mut rng), 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(size).process(&mut buf);

    let bin_hz = sample_rate as f64 / size as f64;
    let half = size / 2;
    for k in 0..=half {
        let gain = if k == 0 {
            0.0
        } else {
            10f64.powf(table_db(table, k as f64 * bin_hz) / 20.0)
        };
        buf[k] *= gain;
        if k != 0 && k != half {
            buf[size - k] = buf[k].conj();
        }
    }
    planner.plan_fft_inverse(size).process(&mut buf);

    let mut samples: Vec<f64> = buf[..length].iter().map(|c| c.re).collect();
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / length as f64).sqrt();
    if rms > 0.0 {
        for s in samples.iter_mut() {
            *s /= rms;
        }
    }
    AudioClip::new(samples, sample_rate)
}

/// Mix `speech + g * noise` with `g` chosen so the speech-to-scaled-noise
/// power ratio equals `snr_db`. Powers are measured over the full clips.
pub fn mix_at_snr(speech: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    if speech.len() != noise.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: speech {} vs noise {}",
            speech.len(),
            noise.len()
        )));
    }
    if speech.sample_rate != noise.sample_rate {
        return Err(Error::InvalidInput("sample rate mismatch".into()));
    }
    let p_speech = speech.samples.iter().map(|s| s * s).sum::<f64>();
    let p_noise = noise.samples.iter().map(|s| s * s).sum::<f64>();
    if p_speech == 0.0 || p_noise == 0.0 {
        return Err(Error::InvalidInput(
            "mix_at_snr requires non-silent speech and noise".into(),
        ));
    }
    let g = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = speech
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(s, n)| s + g * n)
        .collect();
    AudioClip::new(samples, speech.sample_rate)
}

/// Where and how a transient was injected.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransientInfo {
    pub channel: usize,
    pub onset_s: f64,
    pub dur_s: f64,
}

/// Add a cropped, level-matched cut of `noise_clip` to exactly one randomly
/// chosen channel. Duration is drawn from [0.1, 0.3] s and the level from
/// -5..+5 dB relative to that channel's RMS.
pub fn inject_transient<R: Rng>(
    clips: &mut [AudioClip],
    noise_clip: &AudioClip,
    rng: &mut R,
) -> Result<TransientInfo> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("no channels".into()));
    }
    let fs = clips[0].sample_rate;
    let min_len = (0.1 * fs as f64) as usize;
    if noise_clip.len() < min_len {
        return Err(Error::InvalidInput(
            "transient clip must be at least 0.1 s long".into(),
        ));
    }
    if clips.iter().any(|c| c.len() < min_len) {
        return Err(Error::InvalidInput(
            "channel clips must be at least 0.1 s long".into(),
        ));
    }

    let channel = rng.gen_range(0..clips.len());
    let clip_len = clips[channel].len();
    let max_dur = (0.3 * fs as f64) as usize;
    let dur = rng
        .gen_range(min_len..=max_dur)
        .min(noise_clip.len())
        .min(clip_len);
    let onset = rng.gen_range(0..=clip_len - dur);
    let src_start = rng.gen_range(0..=noise_clip.len() - dur);

    let level_db = rng.gen_range(-5.0..5.0);
    let channel_rms = clips[channel].rms().max(1e-4);
    let target_rms = channel_rms * 10f64.powf(level_db / 20.0);
    let cut = &noise_clip.samples[src_start..src_start + dur];
    let cut_rms = (cut.iter().map(|s| s * s).sum::<f64>() / dur as f64).sqrt();
    let gain = if cut_rms > 0.0 { target_rms / cut_rms } else { 0.0 };

    for (dst, src) in clips[channel].samples[onset..onset + dur].iter_mut().zip(cut) {
        *dst += gain * src;
    }
    Ok(TransientInfo {
        channel,
        onset_s: onset as f64 / fs as f64,
        dur_s: dur as f64 / fs as f64,
    })
}
