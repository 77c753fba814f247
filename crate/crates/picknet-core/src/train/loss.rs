//! The amplitude-reconstruction frame loss.

use crate::error::{Error, Result};

/// Loss for one frame: sum over frequency bins of the squared difference
/// between the posterior-weighted mix of per-channel clean amplitudes and
/// the near microphone's amplitude. Also returns the analytic gradient
/// with respect to the posteriors:
/// `dL/dp_m = 2 sum_f (mix_f - target_f) * amp_{m,f}`.
pub fn frame_loss(
    p: &[f64],
    channel_amps: &[Vec<f64>],
    target_amp: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if p.len() != channel_amps.len() || p.is_empty() {
        return Err(Error::InvalidInput(format!(
            "posterior count {} does not match channel count {}",
            p.len(),
            channel_amps.len()
        )));
    }
    let n_bins = target_amp.len();
    if channel_amps.iter().any(|a| a.len() != n_bins) {
        return Err(Error::InvalidInput(
            "channel amplitude dimension does not match target".into(),
        ));
    }

    let mut loss = 0.0;
    let mut dldp = vec![0.0; p.len()];
    for f in 0..n_bins {
        let mut mix = 0.0;
        for (pm, amps) in p.iter().zip(channel_amps) {
            mix += pm * amps[f];
        }
        let err = mix - target_amp[f];
        loss += err * err;
        for (d, amps) in dldp.iter_mut().zip(channel_amps) {
            *d += 2.0 * err * amps[f];
        }
    }
    Ok((loss, dldp))
}
