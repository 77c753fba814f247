//! Finite-difference verification of the analytic gradients.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::FrameExample;
use super::loss::frame_loss;
use crate::error::Result;
use crate::model::{Mode, PickNet};

fn loss_of(net: &PickNet<f64>, example: &FrameExample) -> Result<f64> {
    let (post, _) = net.forward(&example.patches, 0, Mode::Train)?;
    let (loss, _) = frame_loss(&post.p, &example.channel_amps, &example.target_amp)?;
    Ok(loss)
}

/// Compare analytic parameter gradients of the frame loss against central
/// finite differences and return the worst relative error
/// (`|a - n| / max(|a|, |n|, 1e-8)`).
///
/// Each parameter is probed at step widths `h`, `h/2` and `h/4`, keeping
/// the best-agreeing stencil. A ReLU kink or a max-pool argmax flip inside
/// a wide stencil makes that one finite difference meaningless, while a
/// genuinely wrong analytic gradient disagrees with every stencil width,
/// so narrowing never hides a real defect.
///
/// `max_per_tensor` limits how many entries of each parameter tensor are
/// probed (seeded uniform choice, every tensor covered); `None` probes every
/// parameter, which is only practical for small models.
///
/// The finite-difference oracle carries roundoff noise of about
/// `eps * |loss| / (2h)`; parameters whose true gradient is structurally
/// zero (a convolution bias feeding batch norm, for instance) compare that
/// noise against the 1e-8 denominator floor. Callers should keep the
/// example's loss magnitude below ~0.1 — gradient correctness is invariant
/// to amplitude scale, the oracle's noise floor is not.
pub fn gradient_check(
    net: &PickNet<f64>,
    example: &FrameExample,
    h: f64,
    max_per_tensor: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let (post, cache) = net.forward(&example.patches, 0, Mode::Train)?;
    let (_, dldp) = frame_loss(&post.p, &example.channel_amps, &example.target_amp)?;
    let analytic = net.backward(&cache, &dldp)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut work = net.clone();
    for ti in 0..analytic.tensors.len() {
        let n_params = analytic.tensors[ti].len();
        let indices: Vec<usize> = match max_per_tensor {
            Some(limit) if n_params > limit => {
                let mut all: Vec<usize> = (0..n_params).collect();
                all.shuffle(&mut rng);
                all.truncate(limit);
                all
            }
            _ => (0..n_params).collect(),
        };
        for idx in indices {
            let orig = net.trainable_params()[ti].data[idx];
            let a = analytic.tensors[ti].data[idx];
            let mut err = f64::INFINITY;
            for step in [h, h / 2.0, h / 4.0] {
                work.trainable_params_mut()[ti].data[idx] = orig + step;
                let hi = loss_of(&work, example)?;
                work.trainable_params_mut()[ti].data[idx] = orig - step;
                let lo = loss_of(&work, example)?;
                let numeric = (hi - lo) / (2.0 * step);
                let e = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if e < err {
                    err = e;
                }
            }
            work.trainable_params_mut()[ti].data[idx] = orig;
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
