mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hiercrop::cells::CellKind;

use config::RunConfig;
use error::CliError;

/// Hierarchical crop classification from image time series.
#[derive(Parser)]
#[command(name = "hiercrop", version, after_long_help = config::keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Held-out strip.
    #[arg(long)]
    test_fold: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its hierarchy file.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train on every fold except the test fold; writes a checkpoint per epoch.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the test fold.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Score raw pixel predictions without field voting.
        #[arg(long)]
        no_majority_vote: bool,
        #[arg(long)]
        confidence: Option<f64>,
    },
    /// Coverage and covered accuracy over a grid of confidence thresholds.
    CoverageCurve {
        #[command(flatten)]
        common: Common,
        /// Separately trained models to compare instead of restricting one.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Finest-level accuracy by share of occluded frames.
    OcclusionReport {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        #[arg(long)]
        no_majority_vote: bool,
    },
    /// Finite-difference check of a tiny end-to-end network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Cell to check; all by default.
        #[arg(long)]
        cell: Option<CellKind>,
    },
    /// Parameter count of one recurrent cell.
    ParamCount {
        #[arg(long, default_value = "star")]
        cell: CellKind,
        #[arg(long = "in", default_value_t = 4)]
        input_dim: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        kernel: usize,
    },
}

impl Common {
    fn load(&self, extra: &[(&str, String)]) -> Result<RunConfig, CliError> {
        let mut pairs = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set `{s}`: expected KEY=VALUE")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("paths.dataset", path(&self.dataset)),
            ("paths.checkpoint", path(&self.checkpoint)),
            ("paths.report_dir", path(&self.report_dir)),
            ("eval.test_fold", self.test_fold.map(|f| f.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        }
        pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        RunConfig::load(self.config.as_deref(), &pairs)
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::GenData { common } => commands::gen_data(&common.load(&[])?),
        Command::Train { common } => commands::train_model(&common.load(&[])?),
        Command::Eval {
            common,
            no_majority_vote,
            confidence,
        } => {
            let mut extra = Vec::new();
            if no_majority_vote {
                extra.push(("eval.majority_vote", "false".to_string()));
            }
            if let Some(c) = confidence {
                extra.push(("eval.confidence", c.to_string()));
            }
            commands::eval(&common.load(&extra)?)
        }
        Command::CoverageCurve {
            common,
            checkpoints,
            points,
        } => {
            let extra: Vec<_> = points.map(|p| ("eval.curve_points", p.to_string())).into_iter().collect();
            commands::coverage(&common.load(&extra)?, &checkpoints)
        }
        Command::OcclusionReport {
            common,
            thresholds,
            no_majority_vote,
        } => {
            let mut extra = Vec::new();
            if !thresholds.is_empty() {
                let list: Vec<String> = thresholds.iter().map(ToString::to_string).collect();
                extra.push(("eval.occlusion_thresholds", list.join(",")));
            }
            if no_majority_vote {
                extra.push(("eval.majority_vote", "false".to_string()));
            }
            commands::occlusion(&common.load(&extra)?)
        }
        Command::Gradcheck { common, cell } => {
            let cfg = common.load(&[])?;
            let cells = cell.map_or(CellKind::ALL.to_vec(), |c| vec![c]);
            commands::gradcheck(&cells, cfg.seed)
        }
        Command::ParamCount {
            cell,
            input_dim,
            hidden,
            kernel,
        } => commands::count(cell, input_dim, hidden, kernel),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
