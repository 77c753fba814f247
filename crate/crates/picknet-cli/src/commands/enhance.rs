use std::path::PathBuf;

use clap::Args;
use picknet_core::dsp::wav;
use picknet_core::model::{load_checkpoint, PickNet};
use picknet_core::stream::{diarize, format_rttm, process_stream, Smoothing, StreamConfig};

use crate::logging::Logger;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct EnhanceArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output prefix: writes <prefix>.wav plus optional sidecars.
    #[arg(long)]
    pub out_prefix: PathBuf,
    /// Evaluate the selection model every N frames.
    #[arg(long, default_value_t = 3)]
    pub subsample_n: usize,
    /// Force raw posteriors (the default) even if --smoothing was given.
    #[arg(long)]
    pub no_smoothing: bool,
    /// Posterior smoothing: `none` or `ema:ALPHA`.
    #[arg(long, default_value = "none")]
    pub smoothing: String,
    /// Write the posterior timeline to <prefix>.timeline.jsonl.
    #[arg(long)]
    pub timeline: bool,
    /// Write device diarization to <prefix>.rttm.
    #[arg(long)]
    pub rttm: bool,
    /// Minimum diarization segment duration in seconds.
    #[arg(long, default_value_t = 0.2)]
    pub min_segment_s: f64,
    /// One input WAV per device.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

fn parse_smoothing(text: &str) -> CliResult<Smoothing> {
    if text == "none" {
        return Ok(Smoothing::None);
    }
    if let Some(alpha) = text.strip_prefix("ema:") {
        let alpha: f64 = alpha
            .parse()
            .map_err(|e| CliError::usage(format!("--smoothing ema alpha: {e}")))?;
        return Ok(Smoothing::Ema { alpha });
    }
    Err(CliError::usage(format!(
        "--smoothing must be `none` or `ema:ALPHA`, got `{text}`"
    )))
}

pub fn run(args: EnhanceArgs, logger: &mut Logger) -> CliResult<()> {
    if !args.checkpoint.is_file() {
        return Err(CliError::usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let smoothing = if args.no_smoothing {
        Smoothing::None
    } else {
        parse_smoothing(&args.smoothing)?
    };

    let ck = load_checkpoint(&args.checkpoint)?;
    let net: PickNet<f32> = PickNet::from_checkpoint(&ck)?;

    let clips = args
        .inputs
        .iter()
        .map(wav::read)
        .collect::<picknet_core::Result<Vec<_>>>()?;
    let rate = clips[0].sample_rate;
    if clips.iter().any(|c| c.sample_rate != rate) {
        return Err(CliError::usage(format!(
            "input sample rates differ: {:?}",
            clips.iter().map(|c| c.sample_rate).collect::<Vec<_>>()
        )));
    }

    let config = StreamConfig {
        subsample_n: args.subsample_n,
        feature_kind: ck.config.feature_kind,
        smoothing,
        ..StreamConfig::default()
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    logger.event(
        "config",
        serde_json::json!({
            "command": "enhance",
            "checkpoint": args.checkpoint,
            "inputs": args.inputs,
            "out_prefix": args.out_prefix,
            "subsample_n": args.subsample_n,
            "smoothing": serde_json::to_value(&smoothing).unwrap_or_default(),
        }),
    );

    let out = process_stream(&clips, &net, &config)?;
    for w in &out.stats.warnings {
        eprintln!("warning: {w}");
        logger.event("warning", serde_json::json!({ "message": w }));
    }

    let wav_path = args.out_prefix.with_extension("wav");
    wav::write(&wav_path, &out.enhanced, wav::SampleFormat::Float32)?;
    println!(
        "enhanced {} channels, {} frames ({} model evaluations) -> {}",
        clips.len(),
        out.stats.n_frames,
        out.stats.n_evals,
        wav_path.display()
    );

    if args.timeline {
        let path = args.out_prefix.with_extension("timeline.jsonl");
        std::fs::write(&path, out.timeline.to_jsonl()?)
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
        println!("timeline -> {}", path.display());
    }
    if args.rttm {
        let segments = diarize(&out.timeline, args.min_segment_s);
        let recording_id = args
            .out_prefix
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "session".into());
        let path = args.out_prefix.with_extension("rttm");
        std::fs::write(&path, format_rttm(&segments, &recording_id))
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
        println!("diarization ({} segments) -> {}", segments.len(), path.display());
    }
    logger.event(
        "done",
        serde_json::json!({
            "frames": out.stats.n_frames,
            "evals": out.stats.n_evals,
            "macs": out.stats.macs,
            "resyncs": out.stats.resyncs,
        }),
    );
    Ok(())
}
