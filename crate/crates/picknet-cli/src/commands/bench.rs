use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use picknet_core::dsp::FeaturePatch;
use picknet_core::model::{load_checkpoint, Mode, PickNet};

use crate::logging::Logger;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct BenchArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Channel counts to benchmark, comma separated.
    #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
    pub channels: Vec<usize>,
    /// Frames to process per measurement.
    #[arg(long, default_value_t = 10_000)]
    pub frames: usize,
    /// Subsampled evaluation interval to compare against N=1.
    #[arg(long, default_value_t = 3)]
    pub subsample_n: usize,
}

/// Deterministic pseudo-random patches; the values only need to be varied,
/// not meaningful.
fn patches(m: usize, rows: usize, dim: usize, salt: u64) -> Vec<FeaturePatch> {
    (0..m)
        .map(|c| {
            let mut state = salt
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(c as u64 + 1);
            let values = (0..rows * dim)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
                })
                .collect();
            FeaturePatch {
                values,
                dim,
                center_index: 0,
            }
        })
        .collect()
}

pub fn run(args: BenchArgs, logger: &mut Logger) -> CliResult<()> {
    if !args.checkpoint.is_file() {
        return Err(CliError::usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    if args.frames == 0 || args.subsample_n == 0 || args.channels.is_empty() {
        return Err(CliError::usage("--frames, --subsample-n and --channels must be positive"));
    }
    let ck = load_checkpoint(&args.checkpoint)?;
    let net: PickNet<f32> = PickNet::from_checkpoint(&ck)?;
    let (rows, dim) = ck.config.input_shape;
    logger.event(
        "config",
        serde_json::json!({
            "command": "bench",
            "checkpoint": args.checkpoint,
            "channels": args.channels,
            "frames": args.frames,
            "subsample_n": args.subsample_n,
        }),
    );

    println!(
        "{:>3} {:>14} {:>16} {:>16} {:>10}",
        "M", "MACs/forward", "N=1 ms/frame", "N=k ms/frame", "evals N=k"
    );
    let mut mac_table = Vec::new();
    for &m in &args.channels {
        if m == 0 {
            return Err(CliError::usage("channel counts must be positive"));
        }
        // A few distinct inputs to cycle through, excluded from timing.
        let variants: Vec<Vec<FeaturePatch>> =
            (0..8).map(|salt| patches(m, rows, dim, salt)).collect();

        let (_, cache) = net
            .forward(&variants[0], 0, Mode::Eval)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let macs = cache.macs;
        mac_table.push((m, macs));

        // Selection stage with evaluation at every frame.
        let start = Instant::now();
        for t in 0..args.frames {
            let _ = net
                .forward(&variants[t % variants.len()], t, Mode::Eval)
                .map_err(|e| CliError::runtime(e.to_string()))?;
        }
        let full = start.elapsed().as_secs_f64();

        // Selection stage with evaluation every N frames (held otherwise).
        let start = Instant::now();
        let mut evals = 0u64;
        for t in 0..args.frames {
            if t % args.subsample_n == 0 {
                let _ = net
                    .forward(&variants[t % variants.len()], t, Mode::Eval)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                evals += 1;
            }
        }
        let sub = start.elapsed().as_secs_f64();

        let full_ms = 1e3 * full / args.frames as f64;
        let sub_ms = 1e3 * sub / args.frames as f64;
        println!(
            "{m:>3} {macs:>14} {full_ms:>16.4} {sub_ms:>16.4} {evals:>10}"
        );
        logger.event(
            "bench",
            serde_json::json!({
                "channels": m,
                "macs_per_forward": macs,
                "ms_per_frame_full": full_ms,
                "ms_per_frame_subsampled": sub_ms,
                "evals_subsampled": evals,
                "walltime_ratio": full / sub,
            }),
        );
    }

    // MAC counts must fit a + b*M with zero residual.
    if mac_table.len() >= 2 {
        let (m0, c0) = mac_table[0];
        let (m1, c1) = mac_table[1];
        let b = (c1 - c0) / (m1 - m0) as u64;
        let a = c0 - b * m0 as u64;
        let affine = mac_table
            .iter()
            .all(|&(m, c)| c == a + b * m as u64);
        println!(
            "MAC model: {a} + {b} * M ({})",
            if affine { "exact fit" } else { "NOT affine" }
        );
        logger.event(
            "mac_fit",
            serde_json::json!({ "intercept": a, "slope": b, "exact": affine }),
        );
    }
    Ok(())
}
