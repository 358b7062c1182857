use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "gtgib", version, about = "Temporal link prediction with structure enhancement and information-bottleneck filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by commands that resolve a run configuration.
#[derive(Args, Debug, Default, Clone)]
pub struct RunFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the edge bottleneck term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the embedding bottleneck term.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Random candidates per focal node.
    #[arg(long)]
    pub k_rand: Option<usize>,
    /// Hop candidates per hop, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hop_counts: Option<Vec<usize>>,
    /// Fraction of nodes withheld from training.
    #[arg(long)]
    pub inductive_frac: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a JODIE-style CSV into compact ids.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Users and items use separate id spaces.
        #[arg(long)]
        bipartite: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write metrics, checkpoint and manifest.
    Train(RunFlags),
    /// Evaluate the checkpoint of a finished run.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Train every variant over several seeds and compare test AP.
    Ablate {
        #[command(flatten)]
        flags: RunFlags,
        /// Variants, comma separated (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Number of seeds, counting up from the configured seed.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Run the information-theoretic checks and print a JSON summary.
    Verify {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of the sampler hit-probability bound.
    EnhanceVerify {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic planted-preference dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A check ran to completion but reported failures.
#[derive(Debug)]
pub struct ChecksFailed(pub String);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ChecksFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gtgib_core::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest { input, bipartite, out } => commands::ingest(&input, bipartite, &out),
        Command::Train(flags) => commands::train(&flags),
        Command::Eval { run, threads } => commands::eval(&run, threads),
        Command::Ablate { flags, variants, seeds } => commands::ablate(&flags, variants.as_deref(), seeds),
        Command::Verify { instances, seed, threads, out } => commands::verify(instances, seed, threads, out.as_deref()),
        Command::EnhanceVerify { trials, seed, threads, out } => {
            commands::enhance_verify(trials, seed, threads, out.as_deref())
        }
        Command::Synth { config, seed, out } => commands::synth(config.as_deref(), seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
