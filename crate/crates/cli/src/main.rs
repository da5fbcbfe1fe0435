//! Command-line front end: dataset synthesis, training, evaluation and
//! single-file decoding.

mod commands;
mod error;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "w2lp", about = "Desk-scale convolutional CTC speech recognition lab")]
struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset from a transcript list and write its manifest.
    Synth(SynthArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Score a checkpoint against a manifest (greedy, or beam with --width).
    Eval(EvalArgs),
    /// Transcribe a single WAV file.
    Decode(DecodeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Text file with one transcript per line.
    #[arg(long)]
    transcripts: PathBuf,
    /// Output directory for WAV files and manifest.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated tempo factors.
    #[arg(long, default_value = "1.0,1.05,1.1")]
    tempos: String,
    /// Comma-separated default-voice indices (0..=2).
    #[arg(long, default_value = "0,1,2")]
    voices: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Origin label written to the manifest.
    #[arg(long, default_value = "synthetic")]
    origin: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override train.ratio (probability or natural|synthetic|50/50|33/66).
    #[arg(long)]
    ratio: Option<String>,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// ARPA language model for beam-search fusion.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Beam width; greedy decoding when absent.
    #[arg(long)]
    width: Option<usize>,
    /// Language model weight.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Per-word insertion bonus.
    #[arg(long, default_value_t = 1.5)]
    beta: f64,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 16-bit mono PCM WAV file.
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.5)]
    beta: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[config]: could not set thread count: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Decode(args) => commands::decode(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
