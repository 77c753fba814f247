//! STFT analysis and overlap-add synthesis.
//!
//! Both directions use the square-root Hann window, which sums to one across
//! 50%-overlapped frames (analysis times synthesis), so interior samples
//! reconstruct exactly.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioClip, ComplexSpectrogram};
use crate::error::{Error, Result};

/// Square-root periodic Hann: sqrt(0.5 - 0.5 cos(2 pi n / N)) = sin(pi n / N).
pub(crate) fn sqrt_hann(win_len: usize) -> Vec<f64> {
    (0..win_len)
        .map(|n| (std::f64::consts::PI * n as f64 / win_len as f64).sin())
        .collect()
}

/// Forward STFT. Frame `t` covers samples `[t*hop, t*hop + win_len)`.
pub fn stft(clip: &AudioClip, win_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    if win_len == 0 || win_len % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "win_len must be even and positive, got {win_len}"
        )));
    }
    if hop != win_len / 2 {
        return Err(Error::InvalidInput(format!(
            "hop must be win_len/2 (50% overlap), got hop={hop} win_len={win_len}"
        )));
    }
    if clip.len() < win_len {
        return Err(Error::InvalidInput(format!(
            "clip too short for one window: {} < {win_len} samples",
            clip.len()
        )));
    }

    let n_bins = win_len / 2 + 1;
    let n_frames = (clip.len() - win_len) / hop + 1;
    let window = sqrt_hann(win_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(win_len);
    let mut buf = vec![Complex64::default(); win_len];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    let mut data = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let seg = &clip.samples[t * hop..t * hop + win_len];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..n_bins]);
    }

    Ok(ComplexSpectrogram {
        data,
        n_frames,
        n_bins,
        win_len,
        hop,
        sample_rate: clip.sample_rate,
    })
}

/// Inverse STFT by windowed overlap-add. The output has length
/// `(n_frames - 1) * hop + win_len`; samples covered by the full set of
/// overlapping windows reconstruct the input of [`stft`] exactly.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip> {
    if spec.n_bins != spec.win_len / 2 + 1 {
        return Err(Error::InvalidInput(format!(
            "inconsistent spectrogram: n_bins={} but win_len={}",
            spec.n_bins, spec.win_len
        )));
    }
    if spec.data.len() != spec.n_frames * spec.n_bins {
        return Err(Error::InvalidInput(
            "spectrogram data length does not match n_frames * n_bins".into(),
        ));
    }

    let win_len = spec.win_len;
    let window = sqrt_hann(win_len);
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(win_len);
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];

    let out_len = if spec.n_frames == 0 {
        0
    } else {
        (spec.n_frames - 1) * spec.hop + win_len
    };
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex64::default(); win_len];

    for t in 0..spec.n_frames {
        synthesize_frame(spec.frame(t), win_len, &mut buf);
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let scale = 1.0 / win_len as f64;
        for (n, (b, w)) in buf.iter().zip(&window).enumerate() {
            out[t * spec.hop + n] += b.re * scale * w;
        }
    }

    AudioClip::new(out, spec.sample_rate)
}

/// Expand the half spectrum of a real frame into a full conjugate-symmetric
/// spectrum ready for the inverse transform.
pub(crate) fn synthesize_frame(half: &[Complex64], win_len: usize, buf: &mut [Complex64]) {
    let n_bins = win_len / 2 + 1;
    buf[..n_bins].copy_from_slice(half);
    for k in n_bins..win_len {
        buf[k] = half[win_len - k].conj();
    }
}

/// Synthesize a single time-domain frame (synthesis-windowed) from one half
/// spectrum. Used by the streaming overlap-add path.
pub(crate) fn frame_to_samples(
    half: &[Complex64],
    win_len: usize,
    window: &[f64],
    ifft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    buf: &mut [Complex64],
    scratch: &mut [Complex64],
    out: &mut [f64],
) {
    synthesize_frame(half, win_len, buf);
    ifft.process_with_scratch(buf, scratch);
    let scale = 1.0 / win_len as f64;
    for ((o, b), w) in out.iter_mut().zip(buf.iter()).zip(window) {
        *o = b.re * scale * w;
    }
}
