//! Command-line harness: vocabulary building, training, evaluation,
//! generation, gradient checking and graph inspection.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use glhg_core::encoders::ProviderKind;
use glhg_core::model::Ablation;
use glhg_core::training::{TrainConfig, Window};
use glhg_core::ErrorClass;

pub use manifest::{content_hash, sha256_hex, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] glhg_core::Error),
    #[error("refusing to overwrite {0} (pass --force)")]
    OutputExists(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: max relative error {max_rel_error:.3e} in `{param}` (tolerance {tolerance:e})")]
    GradCheckFailed {
        max_rel_error: f64,
        param: String,
        tolerance: f64,
    },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for bad input, 2 for runtime or numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Runtime => 2,
            },
            CliError::OutputExists(_) | CliError::Io { .. } | CliError::Usage(_) => 1,
            CliError::GradCheckFailed { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "glhg",
    version,
    about = "Global-to-local hierarchical graph network for emotional-support dialogue"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings that override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_ablation)]
    pub ablate: Option<Ablation>,
    #[arg(long, value_parser = parse_provider)]
    pub provider: Option<ProviderKind>,
    /// Token-token edge range: an integer or `all`.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<Window>,
}

impl Overrides {
    pub fn apply(&self, config: &mut TrainConfig) {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(a) = self.ablate {
            config.ablation = a;
        }
        if let Some(p) = self.provider {
            config.provider = p;
        }
        if let Some(w) = self.window {
            config.window = w;
        }
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: glhg_core::Error| e.to_string())
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    s.parse().map_err(|e: glhg_core::Error| e.to_string())
}

fn parse_window(s: &str) -> Result<Window, String> {
    if s == "all" {
        return Ok(Window::All);
    }
    s.parse::<usize>()
        .map(Window::Size)
        .map_err(|_| format!("window must be `all` or a non-negative integer, got `{s}`"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary file from a corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        /// Problem-type list; defaults to the built-in twelve labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes checkpoints, the step log and a manifest into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on a corpus and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_provider)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Greedy responses, one line per example.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_provider)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compare autodiff gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Coordinates checked per parameter; 0 checks every coordinate.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        /// Number of training examples in the objective.
        #[arg(long, default_value_t = 2)]
        examples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Offset every analytic gradient entry (negative control).
        #[arg(long)]
        corrupt: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Dump one example's graph, node features and attention as JSON.
    InspectGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        example: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildVocab {
            corpus,
            labels,
            min_freq,
            out,
            force,
        } => commands::build_vocab(&corpus, labels.as_deref(), min_freq, &out, force),
        Command::Train {
            config,
            overrides,
            out,
            force,
        } => commands::train(&config, &overrides, &out, force),
        Command::Eval {
            checkpoint,
            corpus,
            provider,
            out,
            force,
        } => commands::eval(&checkpoint, &corpus, provider, &out, force),
        Command::Generate {
            checkpoint,
            corpus,
            provider,
            out,
            force,
        } => commands::generate(&checkpoint, &corpus, provider, &out, force),
        Command::Gradcheck {
            config,
            overrides,
            eps,
            samples,
            examples,
            tolerance,
            corrupt,
            out,
            force,
        } => commands::gradcheck(
            &config,
            &overrides,
            commands::GradcheckArgs {
                eps,
                samples,
                examples,
                tolerance,
                corrupt,
            },
            out.as_deref(),
            force,
        ),
        Command::InspectGraph {
            checkpoint,
            corpus,
            example,
            out,
            force,
        } => commands::inspect_graph(&checkpoint, &corpus, example, &out, force),
    }
}
