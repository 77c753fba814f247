use std::path::PathBuf;

use clap::Args;
use picknet_core::eval::{evaluate_manifest, EvalOptions};
use picknet_core::model::{load_checkpoint, PickNet};
use picknet_core::sim::read_manifest;

use crate::logging::Logger;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset manifest with ground-truth near-microphone labels.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate the selection model every N frames.
    #[arg(long, default_value_t = 1)]
    pub subsample_n: usize,
    /// Speech-activity gate on the near clean channel, dBFS.
    #[arg(long, default_value_t = -40.0)]
    pub gate_dbfs: f64,
}

pub fn run(args: EvalArgs, logger: &mut Logger) -> CliResult<()> {
    if !args.manifest.is_file() {
        return Err(CliError::usage(format!(
            "manifest {} does not exist",
            args.manifest.display()
        )));
    }
    if !args.checkpoint.is_file() {
        return Err(CliError::usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let ck = load_checkpoint(&args.checkpoint)?;
    let net: PickNet<f32> = PickNet::from_checkpoint(&ck)?;
    let records = read_manifest(&args.manifest)?;
    let base = args
        .manifest
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let opts = EvalOptions {
        subsample_n: args.subsample_n,
        gate_dbfs: args.gate_dbfs,
        feature_kind: ck.config.feature_kind,
    };
    logger.event(
        "config",
        serde_json::json!({
            "command": "eval",
            "manifest": args.manifest,
            "checkpoint": args.checkpoint,
            "subsample_n": args.subsample_n,
            "gate_dbfs": args.gate_dbfs,
        }),
    );
    let report = evaluate_manifest(&records, &base, &net, &opts)?;
    logger.record(&report);
    println!(
        "samples: {}  gated frames: {}",
        report.n_samples, report.gated_frames
    );
    println!(
        "closest-mic accuracy: {:.2}%  ({} / {})",
        100.0 * report.model_accuracy,
        report.model_correct,
        report.gated_frames
    );
    println!(
        "max-energy baseline:  {:.2}%  ({} / {})",
        100.0 * report.baseline_accuracy,
        report.baseline_correct,
        report.gated_frames
    );
    println!("output amplitude SNR: {:.2} dB", report.amp_snr_db);
    Ok(())
}
