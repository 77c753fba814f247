//! Frame-synchronous enhancement: features, subsampled selection,
//! posterior-weighted mixing and overlap-add synthesis.
//!
//! The pipeline never reads input beyond the current frame's window end
//! plus the right context, so the algorithmic lookahead is exactly
//! `CONTEXT_RIGHT * hop` (64 ms) plus one window.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::sync::Synchronizer;
use super::{PosteriorTimeline, Smoothing, StreamConfig, TimelineEntry};
use crate::dsp::{
    mel_filterbank, AudioClip, FeatureKind, FeaturePatch, MeanNormalizer, CONTEXT_LEFT,
    CONTEXT_RIGHT, DEFAULT_HOP, DEFAULT_NORM_HORIZON_S, DEFAULT_WIN_LEN, LOG_FLOOR, PATCH_FRAMES,
};
use crate::error::{Error, Result};
use crate::model::{Mode, PickNet, Scalar};

/// Feature ring capacity per channel; must cover the stacked context plus
/// the extraction lead.
const RING_FEAT: usize = 64;
/// Complex-frame ring capacity per channel.
const RING_SPEC: usize = 16;
/// How far feature extraction may run ahead of frame processing.
const EXTRACT_AHEAD: usize = CONTEXT_RIGHT + 4;

/// The posterior-weighted sum of per-channel STFT coefficients. A one-hot
/// posterior reproduces the selected channel exactly.
pub fn enhance_frame(p: &[f64], frames: &[&[Complex64]]) -> Result<Vec<Complex64>> {
    if p.len() != frames.len() || p.is_empty() {
        return Err(Error::InvalidInput(
            "posterior and frame counts must match".into(),
        ));
    }
    let n_bins = frames[0].len();
    if frames.iter().any(|f| f.len() != n_bins) {
        return Err(Error::InvalidInput("frames must share a bin count".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "posteriors must sum to 1, got {sum}"
        )));
    }
    let mut out = vec![Complex64::default(); n_bins];
    for (pm, frame) in p.iter().zip(frames) {
        for (o, x) in out.iter_mut().zip(*frame) {
            *o += pm * x;
        }
    }
    Ok(out)
}

/// Counters reported after a run.
#[derive(Debug, Clone, Default)]
pub struct StreamStats {
    pub n_frames: usize,
    pub n_evals: u64,
    /// Multiply-accumulate count of all model evaluations.
    pub macs: u64,
    /// Wall time spent inside model evaluation.
    pub eval_wall_s: f64,
    pub resyncs: usize,
    pub warnings: Vec<String>,
}

/// Result of a full stream run.
#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub enhanced: AudioClip,
    pub timeline: PosteriorTimeline,
    pub stats: StreamStats,
}

/// Per-conversation streaming state. Push samples per channel in any block
/// size, then finalize.
pub struct StreamPipeline<'a, T: Scalar> {
    net: &'a PickNet<T>,
    config: StreamConfig,
    n_channels: usize,
    sample_rate: u32,
    dim: usize,
    filterbank: Option<Vec<f64>>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    n_bins: usize,
    sync: Synchronizer,
    normalizers: Vec<MeanNormalizer>,
    frames_extracted: Vec<usize>,
    feat_ring: Vec<Vec<f64>>,
    spec_ring: Vec<Vec<Complex64>>,
    t_next: usize,
    held: Vec<f64>,
    out: Vec<f64>,
    timeline: Vec<TimelineEntry>,
    n_evals: u64,
    macs: u64,
    eval_wall: std::time::Duration,
}

impl<'a, T: Scalar> StreamPipeline<'a, T> {
    pub fn new(
        net: &'a PickNet<T>,
        config: StreamConfig,
        n_channels: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        config.validate()?;
        if n_channels == 0 {
            return Err(Error::InvalidInput("need at least one channel".into()));
        }
        if net.config().feature_kind != config.feature_kind {
            return Err(Error::InvalidConfig(format!(
                "checkpoint expects {} features but the stream is configured for {}",
                net.config().feature_kind.as_str(),
                config.feature_kind.as_str()
            )));
        }
        let (patch_h, dim) = net.config().input_shape;
        if patch_h != PATCH_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "model patch height {patch_h} does not match the {PATCH_FRAMES}-frame context"
            )));
        }
        let n_bins = DEFAULT_WIN_LEN / 2 + 1;
        let filterbank = match config.feature_kind {
            FeatureKind::Amplitude => {
                if dim != n_bins {
                    return Err(Error::InvalidConfig(format!(
                        "amplitude model must take {n_bins} bins, config says {dim}"
                    )));
                }
                None
            }
            FeatureKind::LogMel => Some(mel_filterbank(dim, n_bins, sample_rate)?),
        };
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(DEFAULT_WIN_LEN);
        let ifft = planner.plan_fft_inverse(DEFAULT_WIN_LEN);
        let frame_period = DEFAULT_HOP as f64 / sample_rate as f64;
        Ok(Self {
            net,
            n_channels,
            sample_rate,
            dim,
            filterbank,
            window: crate::dsp::stft::sqrt_hann(DEFAULT_WIN_LEN),
            fft,
            ifft,
            n_bins,
            sync: Synchronizer::new(
                n_channels,
                sample_rate,
                config.resync_interval_s,
                config.sync_search_s,
            ),
            normalizers: (0..n_channels)
                .map(|_| MeanNormalizer::from_horizon_s(dim, DEFAULT_NORM_HORIZON_S, frame_period))
                .collect(),
            frames_extracted: vec![0; n_channels],
            feat_ring: vec![vec![0.0; RING_FEAT * dim]; n_channels],
            spec_ring: vec![vec![Complex64::default(); RING_SPEC * n_bins]; n_channels],
            t_next: 0,
            held: Vec::new(),
            out: Vec::new(),
            timeline: Vec::new(),
            n_evals: 0,
            macs: 0,
            eval_wall: std::time::Duration::ZERO,
            config,
        })
    }

    /// Append raw samples for one channel.
    pub fn push(&mut self, channel: usize, samples: &[f64]) -> Result<()> {
        if channel >= self.n_channels {
            return Err(Error::InvalidInput(format!(
                "channel {channel} out of range"
            )));
        }
        self.sync.push(channel, samples);
        self.process_available(false)
    }

    fn can_extract(&self, m: usize) -> bool {
        let f = self.frames_extracted[m];
        f * DEFAULT_HOP + DEFAULT_WIN_LEN <= self.sync.aligned(m).len()
    }

    fn extract_frame(&mut self, m: usize) {
        let f = self.frames_extracted[m];
        let start = f * DEFAULT_HOP;
        let seg = &self.sync.aligned(m)[start..start + DEFAULT_WIN_LEN];

        let mut buf: Vec<Complex64> = seg
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex64::new(s * w, 0.0))
            .collect();
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(&mut buf, &mut scratch);

        let spec_slot = (f % RING_SPEC) * self.n_bins;
        self.spec_ring[m][spec_slot..spec_slot + self.n_bins].copy_from_slice(&buf[..self.n_bins]);

        let amp: Vec<f64> = buf[..self.n_bins].iter().map(|c| c.norm()).collect();
        let feats: Vec<f64> = match &self.filterbank {
            None => amp,
            Some(fb) => {
                let power: Vec<f64> = amp.iter().map(|a| a * a).collect();
                (0..self.dim)
                    .map(|k| {
                        let row = &fb[k * self.n_bins..(k + 1) * self.n_bins];
                        let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                        e.max(LOG_FLOOR).ln()
                    })
                    .collect()
            }
        };
        let feat_slot = (f % RING_FEAT) * self.dim;
        let mut normalized = vec![0.0; self.dim];
        self.normalizers[m].push(&feats, &mut normalized);
        self.feat_ring[m][feat_slot..feat_slot + self.dim].copy_from_slice(&normalized);
        self.frames_extracted[m] = f + 1;
    }

    fn make_patch(&self, m: usize, t: usize, last_known: usize) -> FeaturePatch {
        let mut values = Vec::with_capacity(PATCH_FRAMES * self.dim);
        let lo = t as isize - CONTEXT_LEFT as isize;
        for r in 0..PATCH_FRAMES as isize {
            let src = (lo + r).clamp(0, last_known as isize) as usize;
            let slot = (src % RING_FEAT) * self.dim;
            values.extend_from_slice(&self.feat_ring[m][slot..slot + self.dim]);
        }
        FeaturePatch {
            values,
            dim: self.dim,
            center_index: t,
        }
    }

    fn process_frame(&mut self, t: usize, last_known: usize) -> Result<()> {
        let evaluated = t % self.config.subsample_n == 0;
        if evaluated {
            let patches: Vec<FeaturePatch> = (0..self.n_channels)
                .map(|m| self.make_patch(m, t, last_known))
                .collect();
            let started = std::time::Instant::now();
            let (post, cache) = self.net.forward(&patches, t, Mode::Eval)?;
            self.eval_wall += started.elapsed();
            self.macs += cache.macs;
            self.n_evals += 1;
            self.held = match (self.config.smoothing, self.held.is_empty()) {
                (Smoothing::Ema { alpha }, false) => self
                    .held
                    .iter()
                    .zip(&post.p)
                    .map(|(prev, new)| alpha * prev + (1.0 - alpha) * new)
                    .collect(),
                _ => post.p,
            };
        }
        self.timeline.push(TimelineEntry {
            t,
            time_s: t as f64 * DEFAULT_HOP as f64 / self.sample_rate as f64,
            p: self.held.clone(),
            evaluated,
        });

        // Enhancement: posterior-weighted sum of the channels' STFT frames.
        let mut mixed = vec![Complex64::default(); self.n_bins];
        for (m, pm) in self.held.iter().enumerate() {
            let slot = (t % RING_SPEC) * self.n_bins;
            for (o, x) in mixed
                .iter_mut()
                .zip(&self.spec_ring[m][slot..slot + self.n_bins])
            {
                *o += pm * x;
            }
        }

        // Overlap-add synthesis.
        let mut buf = vec![Complex64::default(); DEFAULT_WIN_LEN];
        let mut scratch = vec![Complex64::default(); self.ifft.get_inplace_scratch_len()];
        let mut frame_out = vec![0.0; DEFAULT_WIN_LEN];
        crate::dsp::stft::frame_to_samples(
            &mixed,
            DEFAULT_WIN_LEN,
            &self.window,
            &self.ifft,
            &mut buf,
            &mut scratch,
            &mut frame_out,
        );
        let start = t * DEFAULT_HOP;
        if self.out.len() < start + DEFAULT_WIN_LEN {
            self.out.resize(start + DEFAULT_WIN_LEN, 0.0);
        }
        for (o, v) in self.out[start..start + DEFAULT_WIN_LEN].iter_mut().zip(&frame_out) {
            *o += v;
        }
        Ok(())
    }

    /// Extract and process everything currently possible. When `draining`,
    /// the stream end is known and tail frames use right-edge replication.
    fn process_available(&mut self, draining: bool) -> Result<()> {
        loop {
            let mut progress = false;
            for m in 0..self.n_channels {
                while self.can_extract(m) && self.frames_extracted[m] < self.t_next + EXTRACT_AHEAD
                {
                    self.extract_frame(m);
                    progress = true;
                }
            }
            let common = self.frames_extracted.iter().copied().min().unwrap_or(0);
            // The frame count is final once every channel sitting at the
            // minimum has run out of input.
            let common_is_final = draining
                && (0..self.n_channels)
                    .all(|m| self.frames_extracted[m] > common || !self.can_extract(m));
            loop {
                let t = self.t_next;
                let full_context = common > t + CONTEXT_RIGHT;
                let tail = common_is_final && t < common;
                if !(full_context || tail) {
                    break;
                }
                self.process_frame(t, common - 1)?;
                self.t_next += 1;
                progress = true;
            }
            if !progress {
                return Ok(());
            }
        }
    }

    /// Flush remaining frames and return the enhanced clip, the posterior
    /// timeline and the run counters.
    pub fn finalize(mut self) -> Result<ProcessOutput> {
        self.sync.finalize();
        self.process_available(true)?;
        if self.t_next == 0 {
            return Err(Error::InvalidInput(
                "stream shorter than one analysis window".into(),
            ));
        }
        let enhanced = AudioClip::new(self.out, self.sample_rate)?;
        let timeline = PosteriorTimeline {
            entries: self.timeline,
            frame_period_s: DEFAULT_HOP as f64 / self.sample_rate as f64,
        };
        Ok(ProcessOutput {
            enhanced,
            timeline,
            stats: StreamStats {
                n_frames: self.t_next,
                n_evals: self.n_evals,
                macs: self.macs,
                eval_wall_s: self.eval_wall.as_secs_f64(),
                resyncs: self.sync.resyncs,
                warnings: std::mem::take(&mut self.sync.warnings),
            },
        })
    }
}

/// Process whole clips offline: internally this pushes each file through the
/// incremental pipeline.
pub fn process_stream<T: Scalar>(
    clips: &[AudioClip],
    net: &PickNet<T>,
    config: &StreamConfig,
) -> Result<ProcessOutput> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("no input channels".into()));
    }
    let rate = clips[0].sample_rate;
    if clips.iter().any(|c| c.sample_rate != rate) {
        return Err(Error::InvalidInput(
            "all channels must share one sample rate".into(),
        ));
    }
    let mut pipeline = StreamPipeline::new(net, config.clone(), clips.len(), rate)?;
    for (m, clip) in clips.iter().enumerate() {
        pipeline.push(m, &clip.samples)?;
    }
    pipeline.finalize()
}
