use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsfec_core::config::Preset;
use dsfec_core::Error;

mod commands;

/// Radar BEV detector: cost analysis, inference, benchmarking, evaluation and synthetic data.
#[derive(Debug, Parser)]
#[command(name = "dsfec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report per-layer params, FLOPs and activation memory for a model.
    Analyze(AnalyzeArgs),
    /// Run a model on radar frames and write detections as JSON.
    Infer(InferArgs),
    /// Time end-to-end inference on synthetic or recorded frames.
    Bench(BenchArgs),
    /// Score detections against ground truth (center-distance AP).
    Eval(EvalArgs),
    /// Generate synthetic radar frames with ground-truth boxes.
    Synth(SynthArgs),
    /// Write seeded random weights for a model.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

/// Model selection shared by every command that builds a network.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    /// Built-in architecture: baseline, dsfec-l, dsfec-m or dsfec-s.
    #[arg(long)]
    preset: Option<Preset>,
    /// Flat JSON model config; a "preset" key inside it is overridden field by field.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input grid as HxW; defaults to the grid implied by the config.
    #[arg(long, value_name = "HxW", value_parser = parse_dims)]
    input: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Sweep one field instead, e.g. stem_filters=32,16,12,8 or blocks_stage2=6,3.
    #[arg(long, value_name = "AXIS=V1,V2,..")]
    ablate: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// DSFW weight file.
    #[arg(long, value_name = "FILE")]
    weights: PathBuf,
    /// Radar frame CSV (header x,y,z,f0,..). Repeat for several frames.
    #[arg(long, value_name = "CSV", required = true)]
    input: Vec<PathBuf>,
    /// Detections JSON destination; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    score_threshold: f64,
    #[arg(long, default_value_t = 0.3)]
    iou_threshold: f64,
    /// Suppress across classes instead of within each class.
    #[arg(long)]
    global_nms: bool,
    /// Worker threads for per-frame inference.
    #[arg(long, default_value = "1")]
    jobs: NonZeroUsize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Presets to time. Several presets are interleaved frame by frame.
    #[arg(long, num_args = 1.., value_delimiter = ',', required_unless_present = "config")]
    preset: Vec<Preset>,
    /// Flat JSON model config to time instead of presets.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// DSFW weight file; seeded weights when omitted.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Number of synthetic frames to generate.
    #[arg(long, value_name = "N", conflicts_with = "frames")]
    synthetic: Option<usize>,
    /// Directory of frame CSV files.
    #[arg(long, value_name = "DIR")]
    frames: Option<PathBuf>,
    /// Timed passes over the frame set.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Untimed inferences before timing starts.
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Seed for weights and synthetic frames.
    #[arg(long, env = "DSFEC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Worker threads for loading and generating frames (timing stays single-threaded).
    #[arg(long, default_value = "1")]
    jobs: NonZeroUsize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground-truth JSON (array of {frame_id, boxes}).
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Detections JSON (array of detections carrying frame_id).
    #[arg(long, value_name = "FILE")]
    dets: PathBuf,
    /// Center-distance thresholds in meters.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    thresholds: Vec<f64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, env = "DSFEC_SEED", default_value_t = 0)]
    seed: u64,
    /// Number of frames; frame i uses seed + i.
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Output directory for frame_{i}.csv and gt.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    cars: usize,
    #[arg(long, default_value_t = 1)]
    trucks: usize,
    #[arg(long, default_value_t = 2)]
    pedestrians: usize,
    #[arg(long, default_value_t = 1)]
    bicycles: usize,
    /// Returns per object as MIN,MAX.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [4, 12])]
    points_per_object: Vec<usize>,
    /// Background points per frame.
    #[arg(long, default_value_t = 40)]
    clutter: usize,
    /// Minimum distance between object centers in meters.
    #[arg(long, default_value_t = 15.0)]
    min_separation: f64,
    /// Extra per-point feature channels.
    #[arg(long, default_value_t = 2)]
    features: usize,
    /// Also write dets.json from an oracle detector that shifts every box by this many meters.
    #[arg(long, value_name = "METERS")]
    oracle_noise: Option<f64>,
    #[arg(long, default_value = "1")]
    jobs: NonZeroUsize,
}

#[derive(Debug, Args)]
struct InitWeightsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, env = "DSFEC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, short, value_name = "FILE")]
    output: PathBuf,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad dimension `{v}`"));
    Ok((dim(h)?, dim(w)?))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Usage(_)) => 2,
        Some(Error::MissingWeights(_) | Error::WeightFormat(_)) => 3,
        Some(Error::InputData { .. }) => 4,
        Some(Error::Eval(_)) => 5,
        Some(Error::Io(_)) | None => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Infer(a) => commands::infer(a),
        Command::Bench(a) => commands::bench(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::InitWeights(a) => commands::init_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse() {
        assert_eq!(parse_dims("160x160"), Ok((160, 160)));
        assert_eq!(parse_dims("8X12"), Ok((8, 12)));
        assert!(parse_dims("0x4").is_err());
        assert!(parse_dims("160").is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        let code = |e: Error| exit_code(&anyhow::Error::new(e).context("while testing"));
        assert_eq!(code(Error::Usage("x".into())), 2);
        assert_eq!(code(Error::MissingWeights(vec!["a".into()])), 3);
        assert_eq!(code(Error::InputData { line: 3, message: "bad".into() }), 4);
        assert_eq!(code(Error::Eval("ids".into())), 5);
        assert_eq!(code(Error::Io(std::io::Error::other("disk"))), 6);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
