use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{ConfigError, ModelKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hdmf", version, about = "Tag-aware recommendation with hybrid deep-semantic matrix factorization")]
struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the cache directory for `prepare`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// Comma-separated ranking cutoffs, e.g. 5,15,30,50.
    #[arg(long, global = true, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
    #[arg(long, global = true)]
    min_uses: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, filter and split a tag-assignment TSV into a dataset cache.
    Prepare {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Zero-based user,tag,item field positions (the HetRec Delicious dump is 0,2,1).
        #[arg(long, value_delimiter = ',', num_args = 1)]
        columns: Option<Vec<usize>>,
        /// Train,valid,test fractions.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        ratios: Option<Vec<f64>>,
    },
    /// Train a model on a prepared cache and write a checkpoint and loss log.
    Train {
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the top-k items for one user.
    Recommend {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        user: String,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
    },
    /// Compare analytic gradients with central finite differences.
    CheckGradients {
        /// Encoder layer sizes.
        #[arg(long, value_delimiter = ',', default_value = "8,5,3")]
        encoder: Vec<usize>,
        #[arg(long, default_value_t = 12)]
        tags: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), |k| std::env::var(k).ok())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(model) = cli.model {
        cfg.model = model;
    }
    if let Some(cutoffs) = cli.cutoffs {
        cfg.cutoffs = cutoffs;
    }
    if let Some(min_uses) = cli.min_uses {
        cfg.min_uses = min_uses;
    }
    let set_cache = |cfg: &mut RunConfig, cache: Option<PathBuf>| {
        if let Some(c) = cache {
            cfg.cache_dir = c;
        }
    };
    match cli.command {
        Command::Prepare { input, columns, ratios } => {
            if let Some(out) = cli.out {
                cfg.cache_dir = out;
            }
            if let Some(i) = input {
                cfg.input = Some(i);
            }
            if let Some(c) = columns {
                cfg.columns = c
                    .try_into()
                    .map_err(|c| ConfigError(format!("--columns needs three positions, got {c:?}")))?;
            }
            if let Some(r) = ratios {
                cfg.ratios = r
                    .try_into()
                    .map_err(|r| ConfigError(format!("--ratios needs three fractions, got {r:?}")))?;
            }
            commands::prepare(&cfg)
        }
        Command::Train { cache } => {
            set_cache(&mut cfg, cache);
            if let Some(out) = cli.out {
                cfg.out_dir = out;
            }
            commands::train(&cfg)
        }
        Command::Evaluate { cache, checkpoint } => {
            set_cache(&mut cfg, cache);
            if let Some(out) = cli.out {
                cfg.out_dir = out;
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            commands::evaluate(&cfg)
        }
        Command::Recommend { cache, checkpoint, user, k } => {
            set_cache(&mut cfg, cache);
            if let Some(out) = cli.out {
                cfg.out_dir = out;
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            commands::recommend(&cfg, &user, k)
        }
        Command::CheckGradients { encoder, tags, seeds, tolerance } => {
            commands::check_gradients(&encoder, tags, &seeds, tolerance)
        }
    }
}

/// 2 configuration, 3 data or I/O, 4 numerical divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hdmf_core::Error;
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<commands::GradientCheckFailed>().is_some() {
        return 4;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Diverged { .. } | Error::NonFinite(_)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
