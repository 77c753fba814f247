//! End-to-end training-sample generation and the dataset manifest.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noise::{hoth_noise, inject_transient, mix_at_snr, TransientInfo};
use super::rir::{convolve, image_method_rir};
use super::scene::{sample_room_with, RoomScene};
use super::speech::builtin_transients;
use crate::dsp::{wav, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Clips longer than this are split before simulation.
const MAX_CLIP_S: f64 = 10.0;

/// One simulated conversation snippet: the model sees `noisy`, the loss
/// targets come from `clean_reverb`. Microphone 0 is the near device.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub noisy: Vec<AudioClip>,
    pub clean_reverb: Vec<AudioClip>,
    pub near_index: usize,
    pub scene: RoomScene,
    pub snr_db: Vec<f64>,
    pub transient: TransientInfo,
}

/// Simulate one two-microphone sample: sampled room, image-method RIRs for
/// the near and far devices, per-channel Hoth noise at U[10,20] dB SNR, and
/// one transient injected into a random channel.
pub fn make_training_sample(
    clean: &AudioClip,
    seed: u64,
    transient_bank: &[AudioClip],
) -> Result<TrainingSample> {
    if clean.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "clean speech must be {DEFAULT_SAMPLE_RATE} Hz, got {}",
            clean.sample_rate
        )));
    }
    if transient_bank.is_empty() {
        return Err(Error::InvalidInput("transient bank is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = sample_room_with(&mut rng)?;
    let fs = DEFAULT_SAMPLE_RATE as f64;
    let rir_len = (scene.t60 * fs).ceil() as usize;

    let mut clean_reverb = Vec::with_capacity(scene.mic_pos.len());
    for &mic in &scene.mic_pos {
        let rir = image_method_rir(&scene, scene.speaker_pos, mic, rir_len)?;
        clean_reverb.push(convolve(clean, &rir)?);
    }

    let mut noisy = Vec::with_capacity(clean_reverb.len());
    let mut snr_db = Vec::with_capacity(clean_reverb.len());
    for reverb in &clean_reverb {
        let noise_seed: u64 = rng.gen();
        let snr = rng.gen_range(10.0..20.0);
        let noise = hoth_noise(reverb.len(), DEFAULT_SAMPLE_RATE, noise_seed)?;
        noisy.push(mix_at_snr(reverb, &noise, snr)?);
        snr_db.push(snr);
    }

    let clip_idx = rng.gen_range(0..transient_bank.len());
    let transient = inject_transient(&mut noisy, &transient_bank[clip_idx], &mut rng)?;

    Ok(TrainingSample {
        noisy,
        clean_reverb,
        near_index: 0,
        scene,
        snr_db,
        transient,
    })
}

/// One line of the dataset manifest. WAV paths are relative to the manifest
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub scene: RoomScene,
    pub snr_db: Vec<f64>,
    pub transient: TransientInfo,
    pub noisy: Vec<String>,
    pub clean: Vec<String>,
}

impl SampleRecord {
    pub fn noisy_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.noisy.iter().map(|p| base.join(p)).collect()
    }

    pub fn clean_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.clean.iter().map(|p| base.join(p)).collect()
    }
}

pub fn write_manifest(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Options for [`simulate_dataset`].
#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Directory of WAV transient clips; the built-in synthetic bank is used
    /// when absent.
    pub noise_dir: Option<PathBuf>,
}

fn mix_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 of a golden-ratio stream offset.
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Split a clip into pieces no longer than [`MAX_CLIP_S`]; sub-second
/// leftovers are dropped.
fn split_clip(clip: AudioClip) -> Vec<AudioClip> {
    let fs = clip.sample_rate;
    let max = (MAX_CLIP_S * fs as f64) as usize;
    if clip.len() <= max {
        return vec![clip];
    }
    clip.samples
        .chunks(max)
        .filter(|c| c.len() >= fs as usize)
        .map(|c| AudioClip {
            samples: c.to_vec(),
            sample_rate: fs,
        })
        .collect()
}

/// Generate `n_samples` training samples from the clean clips in
/// `clean_dir`, writing float32 WAVs plus `manifest.jsonl` into `out_dir`.
/// Fully deterministic given the seed; samples are generated in parallel.
pub fn simulate_dataset(
    clean_dir: &Path,
    out_dir: &Path,
    opts: &SimulateOptions,
) -> Result<(PathBuf, Vec<SampleRecord>)> {
    let clean_paths = list_wavs(clean_dir)?;
    if clean_paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no WAV files in {}",
            clean_dir.display()
        )));
    }
    let mut pool = Vec::new();
    for p in &clean_paths {
        let clip = wav::read(p)?;
        if clip.sample_rate != DEFAULT_SAMPLE_RATE {
            return Err(Error::InvalidInput(format!(
                "{}: expected {DEFAULT_SAMPLE_RATE} Hz, got {} (resampling is out of scope)",
                p.display(),
                clip.sample_rate
            )));
        }
        pool.extend(split_clip(clip));
    }
    if pool.is_empty() {
        return Err(Error::InvalidInput("no usable clean clips (all too short)".into()));
    }

    let bank = match &opts.noise_dir {
        Some(dir) => {
            let paths = list_wavs(dir)?;
            if paths.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no WAV files in {}",
                    dir.display()
                )));
            }
            paths.iter().map(wav::read).collect::<Result<Vec<_>>>()?
        }
        None => builtin_transients(DEFAULT_SAMPLE_RATE),
    };

    std::fs::create_dir_all(out_dir)?;
    let records: Vec<SampleRecord> = (0..opts.n_samples)
        .into_par_iter()
        .map(|i| -> Result<SampleRecord> {
            let sample_seed = mix_seed(opts.seed, i as u64);
            let clean = &pool[i % pool.len()];
            let sample = make_training_sample(clean, sample_seed, &bank)?;
            let id = format!("sample_{i:05}");
            let mut noisy_names = Vec::new();
            let mut clean_names = Vec::new();
            for (m, clip) in sample.noisy.iter().enumerate() {
                let name = format!("{id}_noisy{m}.wav");
                wav::write(out_dir.join(&name), clip, wav::SampleFormat::Float32)?;
                noisy_names.push(name);
            }
            for (m, clip) in sample.clean_reverb.iter().enumerate() {
                let name = format!("{id}_clean{m}.wav");
                wav::write(out_dir.join(&name), clip, wav::SampleFormat::Float32)?;
                clean_names.push(name);
            }
            Ok(SampleRecord {
                id,
                seed: sample_seed,
                scene: sample.scene,
                snr_db: sample.snr_db,
                transient: sample.transient,
                noisy: noisy_names,
                clean: clean_names,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&records, &manifest)?;
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::super::speech::synthetic_speech;
    use super::*;

    #[test]
    fn sample_is_deterministic_and_near_index_zero() {
        let clean = synthetic_speech(9, 1.2, 16_000);
        let bank = builtin_transients(16_000);
        let a = make_training_sample(&clean, 77, &bank).unwrap();
        let b = make_training_sample(&clean, 77, &bank).unwrap();
        assert_eq!(a.near_index, 0);
        assert_eq!(a.scene, b.scene);
        for (x, y) in a.noisy.iter().zip(&b.noisy) {
            assert_eq!(x.samples, y.samples);
        }
        assert!(a.snr_db.iter().all(|s| (10.0..20.0).contains(s)));
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let clean = AudioClip::new(vec![0.1; 8000], 8_000).unwrap();
        let bank = builtin_transients(16_000);
        assert!(matches!(
            make_training_sample(&clean, 1, &bank),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let clean = synthetic_speech(3, 1.1, 16_000);
        let bank = builtin_transients(16_000);
        let s = make_training_sample(&clean, 5, &bank).unwrap();
        let rec = SampleRecord {
            id: "sample_00000".into(),
            seed: 5,
            scene: s.scene,
            snr_db: s.snr_db,
            transient: s.transient,
            noisy: vec!["a.wav".into(), "b.wav".into()],
            clean: vec!["c.wav".into(), "d.wav".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_manifest(std::slice::from_ref(&rec), &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], rec);
    }

    #[test]
    fn long_clips_are_split() {
        let clip = AudioClip::new(vec![0.1; 16_000 * 25], 16_000).unwrap();
        let parts = split_clip(clip);
        assert_eq!(parts.len(), 3);
        assert!(parts.iter().all(|p| p.duration_s() <= 10.0));
    }
}
