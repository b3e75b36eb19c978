//! `wakeword`: corpus preparation, training, decoding and evaluation from
//! the command line. Every subcommand reads and writes plain files so runs
//! can be inspected and resumed step by step.

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wakeword_core::train::Regime;

#[derive(Debug, Parser)]
#[command(name = "wakeword", version, about = "Wake-word corpus preparation, training, decoding and evaluation")]
pub struct Cli {
    /// Experiment configuration (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a noise bank.
    Synth(SynthArgs),
    /// Balance speakers into train/eval manifests, optionally augmenting.
    Prepare(PrepareArgs),
    /// Write the nested A[X] / B[100-X] views of a training manifest.
    Split(SplitArgs),
    /// Train a model under one regime.
    Train(TrainArgs),
    /// Score every utterance of a manifest with a trained model.
    Decode(DecodeArgs),
    /// DET curve and FRR at a false-alarm budget from decoded streams.
    Eval(EvalArgs),
    /// Trigger-time differences between a CE and a CTC decode.
    Latency(LatencyArgs),
    /// Render DET curves or score trajectories as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub positives: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Shortest negative utterance, seconds.
    #[arg(long)]
    pub neg_min_s: Option<f64>,
    /// Longest negative utterance, seconds.
    #[arg(long)]
    pub neg_max_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Text file listing noise WAVs, one per line.
    #[arg(long)]
    pub noise_list: Option<PathBuf>,
    #[arg(long)]
    pub augment_copies: Option<usize>,
    #[arg(long)]
    pub min_holdout: Option<usize>,
    #[arg(long)]
    pub train_cap: Option<usize>,
    #[arg(long)]
    pub eval_cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Percentage of the training pool placed in A.
    #[arg(long = "x")]
    pub x_percent: Option<u8>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    #[value(alias = "ce")]
    AlignmentBased,
    #[value(alias = "ctc")]
    AlignmentFree,
    Hybrid,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::AlignmentBased => Regime::AlignmentBased,
            RegimeArg::AlignmentFree => Regime::AlignmentFree,
            RegimeArg::Hybrid => Regime::Hybrid,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    /// Phase-A manifest (CE phase for hybrid, the only phase otherwise).
    #[arg(long)]
    pub train_a: Option<PathBuf>,
    /// Phase-B manifest for the hybrid CTC phase.
    #[arg(long)]
    pub train_b: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub switch_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Write a checkpoint every K epochs (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long)]
    pub smooth: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub refractory: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a `decode` run.
    #[arg(long)]
    pub decoded: Option<PathBuf>,
    #[arg(long)]
    pub target_fah: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    /// `decode` output of the CE-trained model.
    #[arg(long)]
    pub ce: Option<PathBuf>,
    /// `decode` output of the CTC-trained model.
    #[arg(long)]
    pub ctc: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotKind {
    Det,
    Trajectory,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(value_enum)]
    pub kind: PlotKind,
    /// DET or trajectory CSV; repeat for several curves.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Legend entry per input; defaults to the file stem.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Dashed reference line on trajectory plots.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wakeword: {}", error::one_line(&e));
            ExitCode::from(error::exit_code(&e))
        }
    }
}
