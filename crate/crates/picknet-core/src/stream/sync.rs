//! Multi-device alignment by correlation matching. Channel 0 is the timing
//! reference; every `resync_interval` the other channels' integer-sample
//! offsets are re-estimated over the most recent 10 s and corrections are
//! applied forward with a 32 ms linear crossfade. Only past samples are ever
//! consulted, so alignment adds no lookahead.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

/// Crossfade length at offset corrections: 32 ms at 16 kHz.
const CROSSFADE: usize = 512;
/// Correlation window for re-estimation, seconds.
const SYNC_WINDOW_S: f64 = 10.0;

/// Lag of `other` relative to `reference` maximizing the cross-correlation
/// within +/- `search_s`. Positive lag means `other` is delayed.
pub fn estimate_offset(reference: &AudioClip, other: &AudioClip, search_s: f64) -> Result<i64> {
    if reference.sample_rate != other.sample_rate {
        return Err(Error::InvalidInput("sample rate mismatch".into()));
    }
    let fs = reference.sample_rate as f64;
    let max_lag = (search_s * fs).round() as usize;
    if max_lag == 0 {
        return Err(Error::InvalidInput("search range too small".into()));
    }
    if reference.len() < 2 * max_lag || other.len() < 2 * max_lag {
        return Err(Error::InvalidInput(format!(
            "signals must be at least twice the search range ({} samples)",
            2 * max_lag
        )));
    }
    let demean = |c: &AudioClip| -> (Vec<f64>, f64) {
        let mean = c.samples.iter().sum::<f64>() / c.len() as f64;
        let v: Vec<f64> = c.samples.iter().map(|s| s - mean).collect();
        let energy = v.iter().map(|s| s * s).sum::<f64>();
        (v, energy)
    };
    let (a, ea) = demean(reference);
    let (b, eb) = demean(other);
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::SyncFailure);
    }

    // Linear cross-correlation R(tau) = sum_n a[n] b[n + tau] via FFT.
    let size = (a.len() + b.len()).next_power_of_two();
    let mut fa = vec![Complex64::default(); size];
    let mut fb = vec![Complex64::default(); size];
    for (dst, s) in fa.iter_mut().zip(&a) {
        dst.re = *s;
    }
    for (dst, s) in fb.iter_mut().zip(&b) {
        dst.re = *s;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    planner.plan_fft_inverse(size).process(&mut fa);

    // R(tau) lives at index tau (mod size).
    let mut best_lag = 0i64;
    let mut best = f64::NEG_INFINITY;
    for lag in -(max_lag as i64)..=max_lag as i64 {
        let idx = lag.rem_euclid(size as i64) as usize;
        let v = fa[idx].re;
        if v > best {
            best = v;
            best_lag = lag;
        }
    }
    Ok(best_lag)
}

/// Per-channel alignment state over a shared output timeline.
pub(crate) struct Synchronizer {
    sample_rate: u32,
    search_s: f64,
    resync_every: usize,
    raw: Vec<Vec<f64>>,
    aligned: Vec<Vec<f64>>,
    offsets: Vec<i64>,
    /// Active crossfade per channel: (start position, previous offset).
    transition: Vec<Option<(usize, i64)>>,
    next_resync: usize,
    pub resyncs: usize,
    pub warnings: Vec<String>,
    finalized: bool,
}

impl Synchronizer {
    pub fn new(n_channels: usize, sample_rate: u32, resync_interval_s: f64, search_s: f64) -> Self {
        Self {
            sample_rate,
            search_s,
            resync_every: (resync_interval_s * sample_rate as f64).round() as usize,
            raw: vec![Vec::new(); n_channels],
            aligned: vec![Vec::new(); n_channels],
            offsets: vec![0; n_channels],
            transition: vec![None; n_channels],
            next_resync: (resync_interval_s * sample_rate as f64).round() as usize,
            resyncs: 0,
            warnings: Vec::new(),
            finalized: false,
        }
    }

    pub fn push(&mut self, channel: usize, samples: &[f64]) {
        self.raw[channel].extend_from_slice(samples);
    }

    pub fn aligned(&self, channel: usize) -> &[f64] {
        &self.aligned[channel]
    }

    #[cfg(test)]
    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    /// Extend aligned buffers as far as the raw data allows, running a
    /// resync whenever every channel reaches the next boundary.
    pub fn advance(&mut self) {
        loop {
            let target = if self.finalized || self.raw.len() == 1 {
                usize::MAX
            } else {
                self.next_resync
            };
            for m in 0..self.raw.len() {
                self.extend_channel(m, target);
            }
            if self.raw.len() == 1 || self.finalized {
                return;
            }
            if self.aligned.iter().all(|a| a.len() >= self.next_resync) {
                self.resync();
            } else {
                return;
            }
        }
    }

    /// Run any resyncs the buffered data still crosses, then drain the tail
    /// past the last boundary.
    pub fn finalize(&mut self) {
        self.advance();
        self.finalized = true;
        self.advance();
    }

    fn extend_channel(&mut self, m: usize, target: usize) {
        let raw = &self.raw[m];
        let aligned = &mut self.aligned[m];
        let offset = self.offsets[m];
        while aligned.len() < target {
            let n = aligned.len();
            let value = match self.transition[m] {
                Some((start, old)) if n < start + CROSSFADE => {
                    let i_old = n as i64 + old;
                    let i_new = n as i64 + offset;
                    let hi = i_old.max(i_new);
                    if hi >= raw.len() as i64 {
                        break;
                    }
                    let at = |i: i64| raw[i.clamp(0, raw.len() as i64 - 1) as usize];
                    let w = (n - start) as f64 / CROSSFADE as f64;
                    (1.0 - w) * at(i_old) + w * at(i_new)
                }
                _ => {
                    self.transition[m] = None;
                    let i = n as i64 + offset;
                    if i >= raw.len() as i64 {
                        break;
                    }
                    raw[i.clamp(0, raw.len() as i64 - 1) as usize]
                }
            };
            aligned.push(value);
        }
    }

    /// Re-estimate every channel's offset against channel 0 over the most
    /// recent window and schedule forward corrections.
    fn resync(&mut self) {
        let end = self.next_resync;
        let window = ((SYNC_WINDOW_S * self.sample_rate as f64) as usize).min(end);
        let start = end - window;
        let reference = AudioClip {
            samples: self.aligned[0][start..end].to_vec(),
            sample_rate: self.sample_rate,
        };
        for m in 1..self.raw.len() {
            let chan = AudioClip {
                samples: self.aligned[m][start..end].to_vec(),
                sample_rate: self.sample_rate,
            };
            match estimate_offset(&reference, &chan, self.search_s) {
                Ok(delta) => {
                    if delta != 0 {
                        let old = self.offsets[m];
                        self.offsets[m] = old + delta;
                        self.transition[m] = Some((end, old));
                    }
                }
                Err(Error::SyncFailure) => {
                    self.warnings.push(format!(
                        "resync at {:.1}s: channel {m} window has no signal; keeping offset {}",
                        end as f64 / self.sample_rate as f64,
                        self.offsets[m]
                    ));
                }
                Err(e) => {
                    self.warnings.push(format!(
                        "resync at {:.1}s: channel {m}: {e}; keeping offset {}",
                        end as f64 / self.sample_rate as f64,
                        self.offsets[m]
                    ));
                }
            }
        }
        self.resyncs += 1;
        self.next_resync = end + self.resync_every;
    }
}
