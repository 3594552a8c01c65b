//! Command-line surface of the `pgt` binary.
//!
//! Every subcommand takes the same flag set; each reads only the keys it
//! needs. Exit codes: 0 success, 1 usage error, 2 data or contract error,
//! 3 internal error. Failures print one JSON line on stderr:
//! `{"code":2,"kind":"data","message":"..."}`.

mod commands;
mod config;
mod serve;

pub use commands::run_command;
pub use config::{claim_output_dir, resolve, RunConfig, CONFIG_FILE};
pub use serve::{serve, LabelServer, Reply};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::env::{TaskId, VariantKind};
use crate::tuning::{LabelSource, LossKind, Trainable};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    /// The one-line stderr diagnostic.
    pub fn diagnostic(&self) -> String {
        serde_json::json!({"code": self.code(), "kind": self.kind(), "message": self.to_string()})
            .to_string()
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Io { .. } => CliError::Internal(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pgt",
    version,
    about = "Goal-latent preference tuning on a seeded gridworld"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Behavior-clone a goal-conditioned bundle from noisy expert demos.
    Pretrain(Flags),
    /// Roll out the bundle under a latent and write a trajectory file.
    Collect(Flags),
    /// One PGT round: filter, pair and tune the latent (or an adapter).
    Tune(Flags),
    /// Evaluate a latent (and optional adapter) on one task variant.
    Eval(Flags),
    /// Several collect-and-tune rounds, each anchored at the previous latent.
    Iterate(Flags),
    /// Four-stage continual run: PGT latent store and full-fine-tuning baselines.
    Continual(Flags),
    /// Tune once per beta on one shared collection.
    SweepBeta(Flags),
    /// Iterative tuning from several noisy expert prompts.
    PromptStudy(Flags),
    /// Serve trajectories and record human labels over HTTP.
    LabelServe(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain(_) => "pretrain",
            Command::Collect(_) => "collect",
            Command::Tune(_) => "tune",
            Command::Eval(_) => "eval",
            Command::Iterate(_) => "iterate",
            Command::Continual(_) => "continual",
            Command::SweepBeta(_) => "sweep-beta",
            Command::PromptStudy(_) => "prompt-study",
            Command::LabelServe(_) => "label-serve",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Pretrain(f)
            | Command::Collect(f)
            | Command::Tune(f)
            | Command::Eval(f)
            | Command::Iterate(f)
            | Command::Continual(f)
            | Command::SweepBeta(f)
            | Command::PromptStudy(f)
            | Command::LabelServe(f) => f,
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall through to the
/// config file, then to the defaults.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// JSON config file of flat keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam step when the trainable group is the full network.
    #[arg(long)]
    pub full_lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// pgt_dpo, ipo, slic or bc.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// goal_latent, full, low_rank or bias_only.
    #[arg(long)]
    pub trainable: Option<Trainable>,
    #[arg(long)]
    pub k_pos: Option<usize>,
    #[arg(long)]
    pub k_neg: Option<usize>,
    #[arg(long)]
    pub collect_n: Option<usize>,
    #[arg(long)]
    pub slic_delta: Option<f64>,
    #[arg(long)]
    pub slic_lambda: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub anchor_initial: Option<bool>,
    /// Episodes per evaluation.
    #[arg(long)]
    pub eval_n: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<TaskId>,
    #[arg(long)]
    pub variant: Option<VariantKind>,
    #[arg(long)]
    pub variant_seed: Option<u64>,

    /// reward or human.
    #[arg(long)]
    pub label_source: Option<LabelSource>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Latent file; without it the prompt demo is encoded.
    #[arg(long)]
    pub latent: Option<PathBuf>,
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub prompt_noise: Option<f64>,
    #[arg(long)]
    pub prompt_seed: Option<u64>,

    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub demos_per_task: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    #[arg(long)]
    pub latent_noise: Option<f64>,

    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub prompts: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<TaskId>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub lambda_ewc: Option<f64>,
    #[arg(long)]
    pub replay_quota: Option<usize>,
    #[arg(long)]
    pub lambda_kd: Option<f64>,

    /// Address for label-serve.
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reveal_rewards: Option<bool>,
    #[arg(long)]
    pub labeler_id: Option<String>,
    /// Directory of labeler UI assets.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

impl Flags {
    /// Set flags as config keys.
    pub fn to_map(&self) -> Map<String, Value> {
        let Value::Object(m) = serde_json::to_value(self).expect("flags serialize") else {
            unreachable!("flags are a JSON object")
        };
        m.into_iter().filter(|(_, v)| !v.is_null()).collect()
    }
}

/// Parse, resolve and run; returns what `main` should exit with.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(
            e.to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string(),
        ),
    })?;
    let flags = cli.command.flags();
    let config = resolve(flags.config.as_deref(), flags.to_map())?;
    run_command(cli.command.name(), &config)
}

/// Process entry point used by the binary.
pub fn main() -> ExitCode {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    // help and version are printed by clap itself and exit 0
    if let Err(e) = Cli::try_parse_from(&args) {
        use clap::error::ErrorKind;
        if matches!(
            e.kind(),
            ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
        ) {
            let _ = e.print();
            return ExitCode::from(
                if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    1
                } else {
                    0
                },
            );
        }
    }
    let outcome = std::panic::catch_unwind(|| run(&args));
    let result = outcome.unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(CliError::Internal(msg))
    });
    match result {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.code())
        }
    }
}
