//! `stflow`: generate synthetic scenes, train, run inference, evaluate, count FLOPs and time the pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stflow::nn::BlockKind;

#[derive(Parser, Debug)]
#[command(name = "stflow", version, about = "Sparse 4D voxel scene flow on synthetic LiDAR sweeps")]
struct Cli {
    /// Maximum worker threads for large matrix products.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scene directories.
    Gen(GenArgs),
    /// Train a network on scene directories and write a checkpoint.
    Train(TrainArgs),
    /// Predict motion flow for every sweep-t point of a scene.
    Infer(InferArgs),
    /// Score a prediction file against a scene's ground truth.
    Eval(EvalArgs),
    /// Count per-stage FLOPs of the pipeline on a scene.
    Flops(FlopsArgs),
    /// Time the pipeline stages on a scene.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SceneScale {
    /// 12.8 m square, sized for the 64x64x8 grid.
    Desk,
    /// Street scale, sized for the 512x512x32 grid.
    Full,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output directory; scenes go to `<out>/scene_0000`, `<out>/scene_0001`, ...
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// Seed of the first scene; scene i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Moving objects per scene.
    #[arg(long)]
    movers: Option<usize>,
    /// Half-width of the populated area, meters.
    #[arg(long)]
    extent: Option<f32>,
    #[arg(long, value_enum, default_value_t = SceneScale::Desk)]
    scale: SceneScale,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run configuration (JSON); the built-in desk configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of scene directories (or a single scene directory).
    #[arg(long)]
    data: PathBuf,
    /// Validation scenes; training scenes are used when omitted.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch history CSV; defaults to the checkpoint path with `.history.csv` appended.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Prediction file: N_t x 3 little-endian f32, plus a `.json` sidecar.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction file written by `infer`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Also count pipeline FLOPs on the scene with this run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BlockArg {
    Conv4d,
    #[value(name = "stdb_b")]
    StdbB,
    #[value(name = "stdb_p")]
    StdbP,
    #[value(name = "stdb_d")]
    StdbD,
}

impl From<BlockArg> for BlockKind {
    fn from(b: BlockArg) -> Self {
        match b {
            BlockArg::Conv4d => BlockKind::Conv4d,
            BlockArg::StdbB => BlockKind::StdbB,
            BlockArg::StdbP => BlockKind::StdbP,
            BlockArg::StdbD => BlockKind::StdbD,
        }
    }
}

#[derive(Args, Debug)]
struct FlopsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Overrides the configured block kind.
    #[arg(long, value_enum)]
    block: Option<BlockArg>,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Timed repetitions after one warm-up run.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    repeat: u32,
    /// Parameters to run with; fresh seeded parameters when omitted.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    stflow::tensor::set_num_threads(cli.threads as usize);
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Flops(a) => commands::flops(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
