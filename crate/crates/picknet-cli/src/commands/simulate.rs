use std::path::PathBuf;

use clap::Args;
use picknet_core::sim::{simulate_dataset, SimulateOptions};

use crate::logging::Logger;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct SimulateArgs {
    /// Directory of 16 kHz mono clean speech WAVs.
    #[arg(long)]
    pub clean_dir: PathBuf,
    /// Output directory for WAVs and manifest.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of samples to generate.
    #[arg(long)]
    pub n_samples: usize,
    /// Generation seed; identical seeds reproduce identical datasets.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of transient-noise WAVs; a built-in synthetic bank is used
    /// when omitted.
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
}

pub fn run(args: SimulateArgs, logger: &mut Logger) -> CliResult<()> {
    if !args.clean_dir.is_dir() {
        return Err(CliError::usage(format!(
            "--clean-dir {} is not a directory",
            args.clean_dir.display()
        )));
    }
    if args.n_samples == 0 {
        return Err(CliError::usage("--n-samples must be at least 1"));
    }
    logger.event(
        "config",
        serde_json::json!({
            "command": "simulate",
            "clean_dir": args.clean_dir,
            "out_dir": args.out_dir,
            "n_samples": args.n_samples,
            "seed": args.seed,
            "noise_dir": args.noise_dir,
        }),
    );
    let opts = SimulateOptions {
        n_samples: args.n_samples,
        seed: args.seed,
        noise_dir: args.noise_dir.clone(),
    };
    let (manifest, records) = simulate_dataset(&args.clean_dir, &args.out_dir, &opts)?;
    for r in &records {
        logger.event(
            "sample",
            serde_json::json!({ "id": r.id, "seed": r.seed, "snr_db": r.snr_db }),
        );
    }
    println!(
        "simulated {} samples ({} channels each) -> {}",
        records.len(),
        records.first().map(|r| r.noisy.len()).unwrap_or(0),
        manifest.display()
    );
    Ok(())
}
