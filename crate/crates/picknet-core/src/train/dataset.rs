//! In-memory training set: per-sample feature sequences are precomputed,
//! per-frame examples are assembled on demand so the patch copies stay
//! transient.

use std::path::Path;

use rayon::prelude::*;

use crate::dsp::{
    amplitude, logmel, running_mean_normalize, stack_context, stft, wav, AudioClip, FeatureKind,
    FeaturePatch, FeatureSeq, DEFAULT_HOP, DEFAULT_N_MELS, DEFAULT_WIN_LEN,
};
use crate::error::{Error, Result};
use crate::sim::{SampleRecord, TrainingSample};

/// Normalization horizon in seconds of past input.
pub(crate) const NORM_HORIZON_S: f64 = 4.0;

/// Everything the loss needs for one frame of one sample.
#[derive(Debug, Clone)]
pub struct FrameExample {
    /// One normalized feature patch per channel (model input).
    pub patches: Vec<FeaturePatch>,
    /// Clean reverberant amplitude spectra per channel at this frame.
    pub channel_amps: Vec<Vec<f64>>,
    /// Near microphone's clean amplitude spectrum at this frame.
    pub target_amp: Vec<f64>,
}

struct PreparedSample {
    /// Normalized model features per channel.
    feats: Vec<FeatureSeq>,
    /// Clean reverberant amplitude spectra per channel (not normalized).
    amps: Vec<FeatureSeq>,
    n_frames: usize,
}

/// A prepared collection of samples.
pub struct Dataset {
    samples: Vec<PreparedSample>,
    pub feature_kind: FeatureKind,
    /// Model feature dimension per frame.
    pub dim: usize,
    pub near_index: usize,
}

fn model_features(clip: &AudioClip, kind: FeatureKind) -> Result<FeatureSeq> {
    let spec = stft(clip, DEFAULT_WIN_LEN, DEFAULT_HOP)?;
    let amp = amplitude(&spec);
    let feats = match kind {
        FeatureKind::Amplitude => amp,
        FeatureKind::LogMel => logmel(&amp, DEFAULT_N_MELS, clip.sample_rate)?,
    };
    running_mean_normalize(&feats, NORM_HORIZON_S)
}

fn prepare(noisy: &[AudioClip], clean: &[AudioClip], kind: FeatureKind) -> Result<PreparedSample> {
    if noisy.len() != clean.len() || noisy.is_empty() {
        return Err(Error::InvalidInput(
            "sample must have matching noisy/clean channel lists".into(),
        ));
    }
    let feats = noisy
        .iter()
        .map(|c| model_features(c, kind))
        .collect::<Result<Vec<_>>>()?;
    let amps = clean
        .iter()
        .map(|c| Ok(amplitude(&stft(c, DEFAULT_WIN_LEN, DEFAULT_HOP)?)))
        .collect::<Result<Vec<_>>>()?;
    let n_frames = feats
        .iter()
        .map(|f| f.n_frames)
        .chain(amps.iter().map(|a| a.n_frames))
        .min()
        .unwrap_or(0);
    if n_frames == 0 {
        return Err(Error::InvalidInput("sample too short for one frame".into()));
    }
    Ok(PreparedSample {
        feats,
        amps,
        n_frames,
    })
}

impl Dataset {
    /// Prepare features for manifest records; WAV paths resolve relative to
    /// `base`. Samples are prepared in parallel.
    pub fn from_records(
        records: &[SampleRecord],
        base: &Path,
        feature_kind: FeatureKind,
    ) -> Result<Self> {
        let samples = records
            .par_iter()
            .map(|r| {
                let noisy = r
                    .noisy_paths(base)
                    .iter()
                    .map(wav::read)
                    .collect::<Result<Vec<_>>>()?;
                let clean = r
                    .clean_paths(base)
                    .iter()
                    .map(wav::read)
                    .collect::<Result<Vec<_>>>()?;
                prepare(&noisy, &clean, feature_kind)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(samples, feature_kind)
    }

    /// Prepare features directly from in-memory samples.
    pub fn from_samples(samples: &[TrainingSample], feature_kind: FeatureKind) -> Result<Self> {
        let prepared = samples
            .par_iter()
            .map(|s| prepare(&s.noisy, &s.clean_reverb, feature_kind))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(prepared, feature_kind)
    }

    fn assemble(samples: Vec<PreparedSample>, feature_kind: FeatureKind) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.feats[0].dim)
            .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?;
        Ok(Self {
            samples,
            feature_kind,
            dim,
            near_index: 0,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.first().map(|s| s.feats.len()).unwrap_or(0)
    }

    pub fn n_frames(&self, sample: usize) -> usize {
        self.samples[sample].n_frames
    }

    /// Every (sample, frame) pair in order.
    pub fn all_frames(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (s, sample) in self.samples.iter().enumerate() {
            for t in 0..sample.n_frames {
                out.push((s as u32, t as u32));
            }
        }
        out
    }

    /// Assemble the frame example for sample `s` at frame `t`.
    pub fn example(&self, s: usize, t: usize) -> Result<FrameExample> {
        let sample = &self.samples[s];
        if t >= sample.n_frames {
            return Err(Error::InvalidInput(format!(
                "frame {t} out of range for sample {s}"
            )));
        }
        let patches = sample
            .feats
            .iter()
            .map(|f| stack_context(f, t))
            .collect::<Result<Vec<_>>>()?;
        let channel_amps: Vec<Vec<f64>> =
            sample.amps.iter().map(|a| a.frame(t).to_vec()).collect();
        let target_amp = channel_amps[self.near_index].clone();
        Ok(FrameExample {
            patches,
            channel_amps,
            target_amp,
        })
    }
}
