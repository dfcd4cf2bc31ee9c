use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msa_core::MaskPolicy;

mod commands;
mod error;
mod files;
mod manifest;

use error::{CliError, Result};

/// Music structure analysis: synthesize data, train, infer and evaluate.
#[derive(Parser)]
#[command(name = "msa", version)]
struct Cli {
    /// Worker threads for per-track parallelism (0 = all cores).
    #[arg(long, global = true, env = "MSA_WORKERS", default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of feature/annotation pairs.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML synth spec; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixed duration in seconds for every song.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump frame targets for one track as JSON.
    Targets {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        policy: PolicyArg,
        /// Temporal downsampling factor of the target grid.
        #[arg(long, default_value_t = 3)]
        factor: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode annotations for feature files with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feature files, directories or glob patterns.
        #[arg(long, required = true, num_args = 1..)]
        features: Vec<String>,
        /// TOML decode config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score estimated annotations against references.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Label mapping profile used to read both sides.
        #[arg(long, default_value = "default")]
        profile: String,
        /// TOML evaluation config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Format conversions and inspection.
    #[command(subcommand)]
    Convert(Convert),
}

#[derive(Subcommand)]
enum Convert {
    /// Gap-tolerant span list to a normalized annotation.
    Spans {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "default")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        source: usize,
    },
    /// Re-map raw labels of an annotation through a profile.
    Relabel {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "default")]
        profile: String,
    },
    /// Concatenate local and global feature files.
    Fuse {
        #[arg(long)]
        local: Option<PathBuf>,
        #[arg(long)]
        global: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a feature file header as JSON.
    Inspect { input: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    Full,
    Hook,
    Gem,
}

impl From<PolicyArg> for MaskPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Full => MaskPolicy::Full,
            PolicyArg::Hook => MaskPolicy::Hook,
            PolicyArg::Gem => MaskPolicy::Gem,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    match cli.command {
        Command::Synth { n, seed, config, duration, out } => commands::synth(n, seed, config.as_deref(), duration, &out),
        Command::Targets { features, annotation, policy, factor, out } => {
            commands::targets(&features, &annotation, policy.into(), factor, out.as_deref())
        }
        Command::Train { config, out } => commands::train_cmd(&config, &out),
        Command::Infer { checkpoint, features, config, out } => {
            commands::infer_cmd(&checkpoint, &features, config.as_deref(), &out)
        }
        Command::Eval { reference, estimate, profile, config, out } => {
            commands::eval_cmd(&reference, &estimate, &profile, config.as_deref(), &out)
        }
        Command::Convert(c) => match c {
            Convert::Spans { input, output, profile, source } => commands::convert_spans(&input, &output, &profile, source),
            Convert::Relabel { input, output, profile } => commands::convert_relabel(&input, &output, &profile),
            Convert::Fuse { local, global, config, out } => {
                commands::convert_fuse(local.as_deref(), global.as_deref(), config.as_deref(), &out)
            }
            Convert::Inspect { input } => commands::convert_inspect(&input),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
