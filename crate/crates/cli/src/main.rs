//! `querytrack`: synthesize data, train, track, evaluate, render overlays.
//!
//! Exit status: 0 on success, 1 on usage or input errors, 2 on runtime
//! failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "querytrack", version, about = "Query-propagation multi-object tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark in MOTChallenge layout
    Synth(SynthArgs),
    /// Train one stage
    Train(TrainArgs),
    /// Track every sequence of a dataset with a checkpoint
    Track(TrackArgs),
    /// Score results files against ground truth
    Eval(EvalArgs),
    /// Draw tracked boxes onto the frames of one sequence
    Overlay(OverlayArgs),
}

/// Which frames of each sequence to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    All,
    /// Frames 1..=⌊F/2⌋
    First,
    /// Frames ⌊F/2⌋+1..=F
    Second,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square image side in pixels
    #[arg(long, default_value_t = 640)]
    pub side: u32,
    #[arg(long, default_value_t = 60)]
    pub frames: u32,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of MOTChallenge sequences
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Part::All)]
    pub part: Part,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Part::All)]
    pub part: Part,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of MOTChallenge sequences with ground truth
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory of `<sequence>.txt` results files
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, value_enum, default_value_t = Part::All)]
    pub part: Part,
    /// Where to write `metrics.csv` and `metrics.txt`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OverlayArgs {
    /// One MOTChallenge sequence directory
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub thickness: u32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Track(a) => commands::track(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Overlay(a) => commands::overlay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
