//! Deterministic signal-processing primitives.
//!
//! Everything in this module is a pure function of its inputs and safe to
//! call concurrently. The default analysis setup is a 32 ms window with a
//! 16 ms stride at 16 kHz (512-point transform, 257 bins).

mod features;
pub(crate) mod stft;
pub mod wav;

pub use features::{
    amplitude, logmel, mel_filterbank, running_mean_normalize, stack_context, MeanNormalizer,
    LOG_FLOOR,
};
pub use stft::{istft, stft};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sample rate in Hz. Fixed jointly by the 32 ms analysis window and
/// the 512-point transform (257 bins).
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// Default analysis window length in samples (32 ms at 16 kHz).
pub const DEFAULT_WIN_LEN: usize = 512;
/// Default hop in samples (16 ms at 16 kHz, 50% overlap).
pub const DEFAULT_HOP: usize = 256;
/// Left (past) context frames fed to the selection model.
pub const CONTEXT_LEFT: usize = 36;
/// Right (future) context frames; these bound the algorithmic latency.
pub const CONTEXT_RIGHT: usize = 4;
/// Total stacked frames per model input patch.
pub const PATCH_FRAMES: usize = CONTEXT_LEFT + 1 + CONTEXT_RIGHT;
/// Default log-mel dimensionality.
pub const DEFAULT_N_MELS: usize = 80;
/// Default mean-normalization horizon: past seconds of input.
pub const DEFAULT_NORM_HORIZON_S: f64 = 4.0;

/// A mono audio signal with dimensionless amplitudes, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be > 0".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("samples must be finite".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square amplitude over the whole clip.
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Per-channel time-frequency representation: `n_frames` rows of `n_bins`
/// complex STFT coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Vec<Complex64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub win_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Seconds per frame.
    pub fn frame_period(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// Which feature representation a [`FeatureSeq`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Amplitude,
    LogMel,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Amplitude => "amplitude",
            FeatureKind::LogMel => "logmel",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitude" => Ok(FeatureKind::Amplitude),
            "logmel" | "log-mel" | "log_mel" => Ok(FeatureKind::LogMel),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature kind `{other}` (expected `amplitude` or `logmel`)"
            ))),
        }
    }
}

/// A real-valued feature sequence: `n_frames` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub dim: usize,
    pub kind: FeatureKind,
    /// Seconds per frame, inherited from the source spectrogram.
    pub frame_period: f64,
}

impl FeatureSeq {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// The stacked, normalized model input for one channel at one frame:
/// [`PATCH_FRAMES`] rows of `dim` features, row [`CONTEXT_LEFT`] being the
/// center frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePatch {
    pub values: Vec<f64>,
    pub dim: usize,
    pub center_index: usize,
}

impl FeaturePatch {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }
}
