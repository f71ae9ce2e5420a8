//! `chbell`: simulate, analyze and optimize detection-loophole-free CH Bell tests.

mod commands;
mod input;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "chbell",
    version,
    about = "CH Bell-test simulation, analysis and randomness reporting"
)]
pub struct Cli {
    /// RNG seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "chbell-out")]
    pub out: PathBuf,

    /// Suppress results echoed to stdout and informational messages.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the Monte-Carlo experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Compute B, B′ and an error bar from counts, block records or timetags.
    Analyze(AnalyzeArgs),
    /// Find the state ratio and angles maximizing a CH objective.
    Optimize(OptimizeArgs),
    /// Optimized B′ as a function of the state ratio, as CSV.
    Sweep(SweepArgs),
    /// Write the local-realistic adversary tables and streams.
    LhvDemo(LhvDemoArgs),
    /// Certified-randomness report for a counts table.
    Dire(DireArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment config (JSON).
    pub config: PathBuf,
    /// Also write the timetag stream.
    #[arg(long)]
    pub timetags: bool,
    #[arg(long, value_enum, default_value_t = StreamFormat::Binary)]
    pub timetag_format: StreamFormat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StreamFormat {
    Csv,
    Binary,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InputKind {
    /// Counts table JSON.
    Counts,
    /// Block-record CSV.
    Blocks,
    TimetagsCsv,
    TimetagsBinary,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Estimator {
    Pooled,
    Conditional,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Counts JSON, block CSV, or timetag file.
    pub input: PathBuf,
    /// Input kind; guessed from the extension and contents when absent.
    #[arg(long, value_enum)]
    pub input_kind: Option<InputKind>,
    /// Coincidence window for timetags: `clock` or `event:NS`.
    #[arg(long, default_value = "clock")]
    pub window: String,
    /// Settings file for timetags: one index 0–3 per line.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    /// Trials per line of the settings file (1 = per-trial settings).
    #[arg(long, default_value_t = 1)]
    pub trials_per_block: u64,
    #[arg(long, value_enum, default_value_t = Estimator::Pooled)]
    pub estimator: Estimator,
    /// Partition count for the error bar on block data; binomial otherwise.
    #[arg(long, conflicts_with = "sigma")]
    pub partitions: Option<usize>,
    /// Externally estimated standard error of B; replaces the computed one.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Linearized,
    Poisson,
}

#[derive(Args, Debug)]
pub struct DetectorArgs {
    /// Detection efficiency of both arms.
    #[arg(long)]
    pub eta: f64,
    /// Background probability per trial as a fraction of the pair signal.
    #[arg(long, default_value_t = 0.0)]
    pub bg: f64,
    /// Mean pairs per trial.
    #[arg(long, default_value_t = 1.0)]
    pub pair_mean: f64,
    #[arg(long, value_enum, default_value_t = ModelArg::Linearized)]
    pub model: ModelArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ObjectiveArg {
    B,
    BPrime,
    Significance,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub det: DetectorArgs,
    /// Hold the state ratio fixed.
    #[arg(long)]
    pub fix_r: Option<f64>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::B)]
    pub objective: ObjectiveArg,
    /// Total trials for the significance objective.
    #[arg(long, default_value_t = 1e8)]
    pub trials: f64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub det: DetectorArgs,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0.02:1.0:0.02")]
    pub r_grid: String,
}

#[derive(Args, Debug)]
pub struct LhvDemoArgs {
    /// Trials of the timed-emitter stream.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Emission spacing of the timed emitter in ns.
    #[arg(long, default_value_t = 100.0)]
    pub t_ns: f64,
}

#[derive(Args, Debug)]
pub struct DireArgs {
    /// Counts JSON or block CSV.
    pub counts: PathBuf,
    /// Acquisition time in seconds.
    #[arg(long)]
    pub seconds: f64,
    /// sha-half, trevisan-sized or hash-extract.
    #[arg(long, default_value = "sha-half")]
    pub policy: String,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Raw bits recorded per event.
    #[arg(long, default_value_t = chbell::dire::DEFAULT_BITS_PER_EVENT)]
    pub bits_per_event: u64,
    /// Raw bits file to hash into extracted bits (hash-extract policy).
    #[arg(long, requires = "seed_file")]
    pub extract: Option<PathBuf>,
    /// Seed bits file for the extractor.
    #[arg(long, requires = "extract")]
    pub seed_file: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = commands::exit_code(&e);
            if code == 2 || code == 3 {
                eprintln!("{}", Cli::command().render_usage());
            }
            ExitCode::from(code)
        }
    }
}
