//! Seeded synthetic audio material for desk-scale runs: speech-like clips
//! (voiced harmonic segments with formant coloring, pauses and fricative
//! bursts) and a small bank of transient noises (clicks, bumps, scrapes).
//! These stand in for external speech/noise corpora, which are not bundled.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioClip;

/// Generate a speech-like clip: alternating voiced segments (drifting pitch,
/// harmonics shaped by two formant resonances, syllabic amplitude
/// modulation), silent pauses and occasional noise bursts. Peak-normalized
/// to 0.9, the ballpark of recorded speech corpora.
pub fn synthetic_speech(seed: u64, duration_s: f64, sample_rate: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let total = (duration_s * fs) as usize;
    let mut samples = vec![0.0f64; total];
    let mut pos = 0usize;
    let mut phase = vec![0.0f64; 40];

    while pos < total {
        let kind: f64 = rng.gen();
        if kind < 0.62 {
            // Voiced segment.
            let seg_len = (rng.gen_range(0.12..0.40) * fs) as usize;
            let f0_start = rng.gen_range(85.0..230.0);
            let f0_end = f0_start * rng.gen_range(0.8..1.2);
            let formant1 = rng.gen_range(300.0..900.0);
            let formant2 = rng.gen_range(1000.0..2600.0);
            let syllable_hz = rng.gen_range(2.5..6.0);
            let amp = rng.gen_range(0.4..1.0);
            let end = (pos + seg_len).min(total);
            let n = end - pos;
            for i in 0..n {
                let frac = i as f64 / n as f64;
                let f0 = f0_start + (f0_end - f0_start) * frac;
                // Attack/decay envelope times syllabic modulation.
                let edge = (i.min(n - i) as f64 / (0.02 * fs)).min(1.0);
                let modu = 0.6 + 0.4 * (std::f64::consts::TAU * syllable_hz * i as f64 / fs).sin();
                let mut v = 0.0;
                let n_harm = ((fs * 0.25) / f0) as usize;
                for (h, ph) in phase.iter_mut().enumerate().take(n_harm.min(40)) {
                    let freq = f0 * (h + 1) as f64;
                    *ph += std::f64::consts::TAU * freq / fs;
                    // Spectral tilt plus two resonance bumps.
                    let tilt = 1.0 / (1.0 + (freq / 500.0).powi(2)).sqrt();
                    let res1 = 1.0 / (1.0 + ((freq - formant1) / 200.0).powi(2));
                    let res2 = 0.6 / (1.0 + ((freq - formant2) / 300.0).powi(2));
                    v += ph.sin() * tilt * (0.25 + res1 + res2);
                }
                samples[pos + i] = amp * edge * modu * v;
            }
            pos = end;
        } else if kind < 0.80 {
            // Fricative-like burst: modulated white noise.
            let seg_len = (rng.gen_range(0.04..0.15) * fs) as usize;
            let amp = rng.gen_range(0.05..0.25);
            let end = (pos + seg_len).min(total);
            for i in pos..end {
                let edge = ((i - pos).min(end - i) as f64 / (0.01 * fs)).min(1.0);
                samples[i] = amp * edge * rng.gen_range(-1.0..1.0);
            }
            pos = end;
        } else {
            // Pause.
            let seg_len = (rng.gen_range(0.05..0.35) * fs) as usize;
            pos = (pos + seg_len).min(total);
        }
    }

    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
    AudioClip { samples, sample_rate }
}

/// Ten deterministic transient clips (0.15-0.40 s): clicks, low-frequency
/// bumps and scrapes, the kind of sound one device picks up when it is
/// knocked or placed on a table.
pub fn builtin_transients(sample_rate: u32) -> Vec<AudioClip> {
    (0..10u64).map(|i| synthetic_transient(i, sample_rate)).collect()
}

fn synthetic_transient(seed: u64, sample_rate: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A05_1E00 ^ seed);
    let fs = sample_rate as f64;
    let len = (rng.gen_range(0.15..0.40) * fs) as usize;
    let mut samples = vec![0.0f64; len];
    match seed % 3 {
        0 => {
            // Click: sharp wideband attack with fast exponential decay.
            let decay = rng.gen_range(80.0..300.0);
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *s = rng.gen_range(-1.0..1.0) * (-decay * t).exp();
            }
        }
        1 => {
            // Bump: damped low-frequency sine.
            let f = rng.gen_range(50.0..150.0);
            let decay = rng.gen_range(15.0..60.0);
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *s = (std::f64::consts::TAU * f * t).sin() * (-decay * t).exp();
            }
        }
        _ => {
            // Scrape: band-limited noise with a slow envelope.
            let mut lp = 0.0;
            let a = rng.gen_range(0.2..0.6);
            for (i, s) in samples.iter_mut().enumerate() {
                lp = (1.0 - a) * lp + a * rng.gen_range(-1.0..1.0);
                let frac = i as f64 / len as f64;
                *s = lp * (1.0 - frac);
            }
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        for s in samples.iter_mut() {
            *s *= 0.8 / peak;
        }
    }
    AudioClip { samples, sample_rate }
}
