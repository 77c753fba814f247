//! Closest-microphone evaluation against simulated ground truth: frame-level
//! selection accuracy over speech-active frames, the max-energy baseline,
//! and the amplitude SNR of the enhanced output against the near channel.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{amplitude, stft, wav, AudioClip, DEFAULT_HOP, DEFAULT_WIN_LEN};
use crate::error::{Error, Result};
use crate::model::{PickNet, Scalar};
use crate::sim::SampleRecord;
use crate::stream::{process_stream, PosteriorTimeline, StreamConfig};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Model evaluation interval (1 = every frame).
    pub subsample_n: usize,
    /// Frames whose near-channel level is below this gate are excluded.
    pub gate_dbfs: f64,
    pub feature_kind: crate::dsp::FeatureKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            subsample_n: 1,
            gate_dbfs: -40.0,
            feature_kind: crate::dsp::FeatureKind::LogMel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub gated_frames: usize,
    pub model_correct: usize,
    pub baseline_correct: usize,
    pub model_accuracy: f64,
    pub baseline_accuracy: f64,
    /// 10 log10( sum |target|^2 / sum (|enhanced| - |target|)^2 ) over all
    /// frames of all samples.
    pub amp_snr_db: f64,
}

/// Speech-activity gate: frame RMS of the near clean channel above the
/// dBFS threshold.
pub fn gate_frames(clean_near: &AudioClip, n_frames: usize, gate_dbfs: f64) -> Vec<bool> {
    let thresh = 10f64.powf(gate_dbfs / 20.0);
    (0..n_frames)
        .map(|t| {
            let lo = t * DEFAULT_HOP;
            let hi = (lo + DEFAULT_WIN_LEN).min(clean_near.len());
            if lo >= hi {
                return false;
            }
            let seg = &clean_near.samples[lo..hi];
            let rms = (seg.iter().map(|s| s * s).sum::<f64>() / seg.len() as f64).sqrt();
            rms > thresh
        })
        .collect()
}

/// Per-frame argmax of time-domain window energy across channels.
pub fn max_energy_labels(noisy: &[AudioClip], n_frames: usize) -> Vec<usize> {
    (0..n_frames)
        .map(|t| {
            let lo = t * DEFAULT_HOP;
            let mut best = 0;
            let mut best_e = f64::NEG_INFINITY;
            for (m, clip) in noisy.iter().enumerate() {
                let hi = (lo + DEFAULT_WIN_LEN).min(clip.len());
                let e = if lo >= hi {
                    0.0
                } else {
                    clip.samples[lo..hi].iter().map(|s| s * s).sum::<f64>()
                };
                if e > best_e {
                    best_e = e;
                    best = m;
                }
            }
            best
        })
        .collect()
}

/// Count gated frames where the timeline's argmax picks `near`.
pub fn count_correct(timeline: &PosteriorTimeline, gate: &[bool], near: usize) -> (usize, usize) {
    let mut gated = 0;
    let mut correct = 0;
    for e in &timeline.entries {
        if e.t < gate.len() && gate[e.t] {
            gated += 1;
            let mut best = 0;
            for (i, v) in e.p.iter().enumerate() {
                if *v > e.p[best] {
                    best = i;
                }
            }
            if best == near {
                correct += 1;
            }
        }
    }
    (gated, correct)
}

struct SampleCounts {
    gated: usize,
    model_correct: usize,
    baseline_correct: usize,
    snr_num: f64,
    snr_den: f64,
}

/// Evaluate one sample's noisy/clean channel sets.
fn eval_sample<T: Scalar>(
    noisy: &[AudioClip],
    clean: &[AudioClip],
    near: usize,
    net: &PickNet<T>,
    opts: &EvalOptions,
) -> Result<SampleCounts> {
    let config = StreamConfig {
        subsample_n: opts.subsample_n,
        feature_kind: opts.feature_kind,
        ..StreamConfig::default()
    };
    let out = process_stream(noisy, net, &config)?;
    let n_frames = out.stats.n_frames;

    let gate = gate_frames(&clean[near], n_frames, opts.gate_dbfs);
    let (gated, model_correct) = count_correct(&out.timeline, &gate, near);

    let energy_labels = max_energy_labels(noisy, n_frames);
    let baseline_correct = energy_labels
        .iter()
        .zip(&gate)
        .filter(|(l, g)| **g && **l == near)
        .count();

    let enhanced_amp = amplitude(&stft(&out.enhanced, DEFAULT_WIN_LEN, DEFAULT_HOP)?);
    let target_amp = amplitude(&stft(&clean[near], DEFAULT_WIN_LEN, DEFAULT_HOP)?);
    let frames = enhanced_amp.n_frames.min(target_amp.n_frames);
    let mut snr_num = 0.0;
    let mut snr_den = 0.0;
    for t in 0..frames {
        for (y, s) in enhanced_amp.frame(t).iter().zip(target_amp.frame(t)) {
            snr_num += s * s;
            snr_den += (y - s) * (y - s);
        }
    }
    Ok(SampleCounts {
        gated,
        model_correct,
        baseline_correct,
        snr_num,
        snr_den,
    })
}

/// Evaluate every record of a manifest (in parallel) and aggregate.
pub fn evaluate_manifest<T: Scalar>(
    records: &[SampleRecord],
    base: &Path,
    net: &PickNet<T>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty manifest".into()));
    }
    let counts: Vec<SampleCounts> = records
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
            eval_sample(&noisy, &clean, 0, net, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&counts))
}

/// Evaluate in-memory samples (in parallel) and aggregate.
pub fn evaluate_samples<T: Scalar>(
    samples: &[crate::sim::TrainingSample],
    net: &PickNet<T>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let counts: Vec<SampleCounts> = samples
        .par_iter()
        .map(|s| eval_sample(&s.noisy, &s.clean_reverb, s.near_index, net, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&counts))
}

fn aggregate(counts: &[SampleCounts]) -> EvalReport {
    let gated: usize = counts.iter().map(|c| c.gated).sum();
    let model_correct: usize = counts.iter().map(|c| c.model_correct).sum();
    let baseline_correct: usize = counts.iter().map(|c| c.baseline_correct).sum();
    let num: f64 = counts.iter().map(|c| c.snr_num).sum();
    let den: f64 = counts.iter().map(|c| c.snr_den).sum();
    EvalReport {
        n_samples: counts.len(),
        gated_frames: gated,
        model_correct,
        baseline_correct,
        model_accuracy: if gated > 0 {
            model_correct as f64 / gated as f64
        } else {
            0.0
        },
        baseline_accuracy: if gated > 0 {
            baseline_correct as f64 / gated as f64
        } else {
            0.0
        },
        amp_snr_db: if den > 0.0 {
            10.0 * (num / den).log10()
        } else {
            f64::INFINITY
        },
    }
}
