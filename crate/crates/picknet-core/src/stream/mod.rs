//! The real-time pipeline: multi-device synchronization by correlation
//! matching, per-frame feature extraction, subsampled model evaluation,
//! posterior-weighted enhancement, overlap-add output and segment-level
//! device diarization.
//!
//! One [`StreamPipeline`] owns one conversation's state and processes frames
//! strictly in order. Offline file processing and incremental pushes share
//! the same code path; a file is just one large push.

mod diarize;
mod pipeline;
mod sync;

pub use diarize::{diarize, format_rttm, DiarizationSegment};
pub use pipeline::{enhance_frame, process_stream, ProcessOutput, StreamPipeline, StreamStats};
pub use sync::estimate_offset;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureKind;
use crate::error::{Error, Result};

/// Posterior smoothing applied at evaluated frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// `smoothed = alpha * previous + (1 - alpha) * new`.
    Ema { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Evaluate the selection model every N frames and hold posteriors in
    /// between.
    pub subsample_n: usize,
    /// Seconds of output timeline between synchronization updates.
    pub resync_interval_s: f64,
    /// Correlation search range, +/- seconds.
    pub sync_search_s: f64,
    pub feature_kind: FeatureKind,
    pub smoothing: Smoothing,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            subsample_n: 3,
            resync_interval_s: 30.0,
            sync_search_s: 0.5,
            feature_kind: FeatureKind::LogMel,
            smoothing: Smoothing::None,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subsample_n < 1 {
            return Err(Error::InvalidConfig("subsample_n must be >= 1".into()));
        }
        if !(self.resync_interval_s > 0.0) {
            return Err(Error::InvalidConfig("resync_interval_s must be > 0".into()));
        }
        if !(self.sync_search_s > 0.0) {
            return Err(Error::InvalidConfig("sync_search_s must be > 0".into()));
        }
        if let Smoothing::Ema { alpha } = self.smoothing {
            if !(0.0..1.0).contains(&alpha) {
                return Err(Error::InvalidConfig("EMA alpha must be in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// One timeline row: the posteriors in effect at frame `t` and whether the
/// model was evaluated there (frames between evaluations hold the previous
/// posteriors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub t: usize,
    pub time_s: f64,
    pub p: Vec<f64>,
    pub evaluated: bool,
}

/// Posteriors for every processed frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorTimeline {
    pub entries: Vec<TimelineEntry>,
    /// Seconds per frame.
    pub frame_period_s: f64,
}

impl PosteriorTimeline {
    /// Serialize as JSON Lines, one entry per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, frame_period_s: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line)?);
        }
        Ok(Self {
            entries,
            frame_period_s,
        })
    }
}
