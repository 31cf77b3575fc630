//! `mfdmc`: train, compare, evaluate and inspect MFDMC models from the shell.
//!
//! Exit codes: 0 success, 1 I/O or data failure, 2 configuration or usage
//! error, 3 numeric failure (including a failed gradient check).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfdmc::Error;

use crate::config::{RunConfig, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "mfdmc", version, about = "Matrix factorization with dynamic multi-view clustering")]
struct Cli {
    /// Directory that relative dataset paths resolve against.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override a config leaf, e.g. `--set model.views=4`. Repeatable; flags win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> mfdmc::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(out) = &self.output {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train MFDMC, write checkpoint, log and metrics, print the summary row.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pin the clustering and entropy weights to zero.
        #[arg(long)]
        ablation: bool,
    },
    /// Train FunkMF or BiasedMF on the same split.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `funkmf` or `biasedmf`.
        #[arg(long)]
        kind: String,
    },
    /// Test RMSE of a saved checkpoint on the configured split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write cluster assignments, center summaries and, given item metadata,
    /// the interpretability report.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `item,category` CSV.
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Run config naming the dataset, for per-user-cluster rating summaries.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short, default_value = "export")]
        output: PathBuf,
    },
    /// Finite-difference check of the analytic gradients on tiny random models.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Adds this value to one gradient block before comparing.
        #[arg(long, hide = true)]
        corrupt_gradient: Option<f64>,
    },
    /// Generate a planted multi-view dataset, optionally fitting it.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Train on the generated data and report cluster recovery.
        #[arg(long)]
        fit: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_numeric() {
        3
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let data_dir: &Path = &cli.data_dir;
    match cli.command {
        Command::Train { cfg, ablation } => {
            let mut cfg = cfg.load()?;
            cfg.model.ablation |= ablation;
            println!("{}", commands::train(&cfg, data_dir)?);
        }
        Command::Baseline { cfg, kind } => {
            let cfg = cfg.load()?;
            println!("{}", commands::baseline(&cfg, &kind, data_dir)?);
        }
        Command::Evaluate { cfg, checkpoint } => {
            let cfg = cfg.load()?;
            println!("{}", commands::evaluate(&cfg, &checkpoint, data_dir)?);
        }
        Command::Export { checkpoint, metadata, config, output } => {
            let ratings = config
                .map(|p| RunConfig::load(Some(&p), &[]).map(|c| (c, data_dir.to_path_buf())))
                .transpose()?;
            let metadata = metadata.or_else(|| ratings.as_ref().and_then(|(c, dir)| c.metadata_path(dir)));
            let req = commands::ExportRequest { checkpoint: &checkpoint, metadata, output: &output, ratings };
            for path in commands::export(&req)? {
                println!("{}", path.display());
            }
        }
        Command::Gradcheck { cfg, corrupt_gradient } => {
            let mut cfg = cfg.load()?;
            if corrupt_gradient.is_some() {
                cfg.gradcheck.corrupt = corrupt_gradient;
            }
            let (table, passed) = commands::gradcheck(&cfg)?;
            print!("{table}");
            if !passed {
                return Ok(3);
            }
        }
        Command::Synth { cfg, fit } => {
            let cfg = cfg.load()?;
            println!("{}", commands::synth(&cfg, fit)?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
