//! Feature extraction: amplitude spectra, log-mel energies, causal mean
//! normalization and temporal context stacking.

use super::{ComplexSpectrogram, FeatureKind, FeaturePatch, FeatureSeq, CONTEXT_LEFT, PATCH_FRAMES};
use crate::error::{Error, Result};

/// Log floor applied before taking the natural log of mel energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Element-wise complex modulus of an STFT.
pub fn amplitude(spec: &ComplexSpectrogram) -> FeatureSeq {
    FeatureSeq {
        data: spec.data.iter().map(|c| c.norm()).collect(),
        n_frames: spec.n_frames,
        dim: spec.n_bins,
        kind: FeatureKind::Amplitude,
        frame_period: spec.frame_period(),
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank on the HTK scale, `n_mels` rows of `n_bins`
/// weights. Filters span 0 Hz to Nyquist; filter k peaks where filter k+1
/// starts rising.
pub fn mel_filterbank(n_mels: usize, n_bins: usize, sample_rate: u32) -> Result<Vec<f64>> {
    if n_mels == 0 {
        return Err(Error::InvalidConfig("n_mels must be >= 1".into()));
    }
    if n_mels > n_bins {
        return Err(Error::InvalidConfig(format!(
            "n_mels={n_mels} exceeds the number of frequency bins {n_bins}"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    // n_mels + 2 points equally spaced on the mel scale; triangle k spans
    // points k-1 .. k+1 with its peak at point k.
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = nyquist / (n_bins - 1) as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            let w = rise.min(fall).max(0.0);
            weights[m * n_bins + k] = w;
        }
    }
    Ok(weights)
}

/// Log-mel energies from an amplitude sequence: squared amplitudes weighted
/// by triangular HTK-scale mel filters, natural log with a fixed floor.
pub fn logmel(feat: &FeatureSeq, n_mels: usize, sample_rate: u32) -> Result<FeatureSeq> {
    if feat.kind != FeatureKind::Amplitude {
        return Err(Error::InvalidInput(
            "logmel expects amplitude features as input".into(),
        ));
    }
    let n_bins = feat.dim;
    let fb = mel_filterbank(n_mels, n_bins, sample_rate)?;

    let mut data = vec![0.0; feat.n_frames * n_mels];
    let mut power = vec![0.0; n_bins];
    for t in 0..feat.n_frames {
        let amp = feat.frame(t);
        for (p, a) in power.iter_mut().zip(amp) {
            *p = a * a;
        }
        let out = &mut data[t * n_mels..(t + 1) * n_mels];
        for (m, o) in out.iter_mut().enumerate() {
            let row = &fb[m * n_bins..(m + 1) * n_bins];
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            *o = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(FeatureSeq {
        data,
        n_frames: feat.n_frames,
        dim: n_mels,
        kind: FeatureKind::LogMel,
        frame_period: feat.frame_period,
    })
}

/// Causal per-dimension mean normalization over a sliding window of past
/// frames. One instance per stream; all state is explicit.
#[derive(Debug, Clone)]
pub struct MeanNormalizer {
    dim: usize,
    horizon_frames: usize,
    history: std::collections::VecDeque<Vec<f64>>,
    sum: Vec<f64>,
}

impl MeanNormalizer {
    /// `horizon_frames` is the maximum number of frames (including the
    /// current one) contributing to the mean.
    pub fn new(dim: usize, horizon_frames: usize) -> Self {
        Self {
            dim,
            horizon_frames: horizon_frames.max(1),
            history: std::collections::VecDeque::new(),
            sum: vec![0.0; dim],
        }
    }

    pub fn from_horizon_s(dim: usize, horizon_s: f64, frame_period: f64) -> Self {
        let frames = (horizon_s / frame_period).floor() as usize;
        Self::new(dim, frames)
    }

    /// Push one frame and return it mean-normalized. At stream start the
    /// mean is taken over whatever frames are available.
    pub fn push(&mut self, frame: &[f64], out: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.dim);
        if self.history.len() == self.horizon_frames {
            let old = self.history.pop_front().unwrap();
            for (s, o) in self.sum.iter_mut().zip(&old) {
                *s -= o;
            }
        }
        self.history.push_back(frame.to_vec());
        for (s, f) in self.sum.iter_mut().zip(frame) {
            *s += f;
        }
        let n = self.history.len() as f64;
        for ((o, f), s) in out.iter_mut().zip(frame).zip(&self.sum) {
            *o = f - s / n;
        }
    }
}

/// Mean-normalize a whole sequence causally: output frame t is input frame t
/// minus the per-dimension mean over the past `horizon_s` seconds of input
/// (truncated at stream start, no lookahead).
pub fn running_mean_normalize(feat: &FeatureSeq, horizon_s: f64) -> Result<FeatureSeq> {
    if !(horizon_s > 0.0) {
        return Err(Error::InvalidInput("horizon must be > 0".into()));
    }
    let mut norm = MeanNormalizer::from_horizon_s(feat.dim, horizon_s, feat.frame_period);
    let mut data = vec![0.0; feat.data.len()];
    for t in 0..feat.n_frames {
        let (lo, hi) = (t * feat.dim, (t + 1) * feat.dim);
        norm.push(feat.frame(t), &mut data[lo..hi]);
    }
    Ok(FeatureSeq {
        data,
        n_frames: feat.n_frames,
        dim: feat.dim,
        kind: feat.kind,
        frame_period: feat.frame_period,
    })
}

/// Stack the temporal context around frame `t`: rows are frames
/// `t - CONTEXT_LEFT .. t + CONTEXT_RIGHT`, with out-of-range frames
/// replicating the nearest valid frame.
pub fn stack_context(feat: &FeatureSeq, t: usize) -> Result<FeaturePatch> {
    if feat.n_frames == 0 {
        return Err(Error::InvalidInput("empty feature sequence".into()));
    }
    if t >= feat.n_frames {
        return Err(Error::InvalidInput(format!(
            "frame index {t} out of range (n_frames = {})",
            feat.n_frames
        )));
    }
    let mut values = Vec::with_capacity(PATCH_FRAMES * feat.dim);
    let lo = t as isize - CONTEXT_LEFT as isize;
    for r in 0..PATCH_FRAMES as isize {
        let src = (lo + r).clamp(0, feat.n_frames as isize - 1) as usize;
        values.extend_from_slice(feat.frame(src));
    }
    Ok(FeaturePatch {
        values,
        dim: feat.dim,
        center_index: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, AudioClip, DEFAULT_HOP, DEFAULT_WIN_LEN};
    use num_complex::Complex64;

    fn scalar_seq(vals: &[f64]) -> FeatureSeq {
        FeatureSeq {
            data: vals.to_vec(),
            n_frames: vals.len(),
            dim: 1,
            kind: FeatureKind::Amplitude,
            frame_period: 0.016,
        }
    }

    #[test]
    fn amplitude_of_3_4i_is_5() {
        let spec = ComplexSpectrogram {
            data: vec![Complex64::new(3.0, 4.0)],
            n_frames: 1,
            n_bins: 1,
            win_len: 0,
            hop: 256,
            sample_rate: 16_000,
        };
        let a = amplitude(&spec);
        assert_eq!(a.data[0], 5.0);
    }

    #[test]
    fn logmel_floor_applies_to_silence() {
        let clip = AudioClip::new(vec![0.0; 4096], 16_000).unwrap();
        let spec = stft(&clip, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
        let lm = logmel(&amplitude(&spec), 80, 16_000).unwrap();
        assert_eq!(lm.dim, 80);
        for v in &lm.data {
            assert_eq!(*v, LOG_FLOOR.ln());
        }
    }

    #[test]
    fn logmel_dimension_is_80_from_257() {
        let clip = AudioClip::new(vec![0.1; 4096], 16_000).unwrap();
        let spec = stft(&clip, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
        let amp = amplitude(&spec);
        assert_eq!(amp.dim, 257);
        let lm = logmel(&amp, 80, 16_000).unwrap();
        assert_eq!(lm.dim, 80);
    }

    #[test]
    fn logmel_rejects_too_many_mels() {
        let clip = AudioClip::new(vec![0.1; 4096], 16_000).unwrap();
        let spec = stft(&clip, DEFAULT_WIN_LEN, DEFAULT_HOP).unwrap();
        let err = logmel(&amplitude(&spec), 300, 16_000).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn normalize_constant_stream_is_zero() {
        let out = running_mean_normalize(&scalar_seq(&[2.5; 10]), 4.0).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_first_frame_is_zero() {
        let out = running_mean_normalize(&scalar_seq(&[7.0, 1.0, 9.0]), 4.0).unwrap();
        assert_eq!(out.data[0], 0.0);
    }

    #[test]
    fn normalize_hand_computed_causal_means() {
        // Means over (1), (1,2), (1,2,6) are 1, 1.5, 3.
        let out = running_mean_normalize(&scalar_seq(&[1.0, 2.0, 6.0]), 4.0).unwrap();
        assert_eq!(out.data, vec![0.0, 0.5, 3.0]);
    }

    #[test]
    fn stack_height_is_41_and_start_replicates() {
        let seq = FeatureSeq {
            data: (0..50).map(|t| t as f64).collect(),
            n_frames: 50,
            dim: 1,
            kind: FeatureKind::Amplitude,
            frame_period: 0.016,
        };
        let p = stack_context(&seq, 0).unwrap();
        assert_eq!(p.values.len(), PATCH_FRAMES);
        for r in 0..=CONTEXT_LEFT {
            assert_eq!(p.row(r)[0], 0.0, "row {r} should replicate frame 0");
        }
        assert_eq!(p.row(CONTEXT_LEFT + 1)[0], 1.0);

        let p = stack_context(&seq, 40).unwrap();
        assert_eq!(p.row(CONTEXT_LEFT)[0], 40.0);
    }

    #[test]
    fn stack_rejects_empty_sequence() {
        let seq = FeatureSeq {
            data: vec![],
            n_frames: 0,
            dim: 1,
            kind: FeatureKind::Amplitude,
            frame_period: 0.016,
        };
        assert!(matches!(
            stack_context(&seq, 0),
            Err(Error::InvalidInput(_))
        ));
    }
}
