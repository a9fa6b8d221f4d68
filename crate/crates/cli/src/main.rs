use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use readability_cli::commands;
use readability_cli::config::{Head, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "readability",
    about = "Bidirectional long-document readability assessment pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root random seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Preset hyperparameters; `cmer` selects the wide 512/256/256/16 model.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified train/test split of a corpus, written as JSONL.
    SplitCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train the hierarchical encoder with the hybrid objective and distill
    /// the sentence corpus.
    TrainHhnn {
        #[command(flatten)]
        common: Common,
    },
    /// Re-run sentence labeling from an existing encoder checkpoint.
    LabelSentences {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the sentence encoder, train the forward model, and fit the
    /// ranking and ordinal heads.
    TrainDsdrrm {
        #[command(flatten)]
        common: Common,
        /// Sentence corpus JSONL (defaults to <out>/sentences.jsonl from
        /// train-hhnn).
        #[arg(long)]
        sentence_corpus: Option<PathBuf>,
    },
    /// Evaluate a head over the test split and emit the metric report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Head to evaluate.
        #[arg(long, value_enum)]
        head: Option<Head>,
        /// Comma-separated seeds: train and evaluate once per seed and
        /// report per-run and mean metrics.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Emit the explicit-feature CSV for external classifiers.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, head: Option<Head>, sentence_corpus: Option<PathBuf>) -> Result<RunConfig, readability_cli::CliError> {
    let over = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        head,
        preset: common.preset.clone(),
        sentence_corpus,
    };
    RunConfig::resolve(common.config.as_deref(), &over)
}

fn run() -> Result<(), readability_cli::CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::SplitCorpus { common } => {
            let cfg = resolve(&common, None, None)?;
            commands::cmd_split_corpus(&cfg)
        }
        Command::TrainHhnn { common } => {
            let cfg = resolve(&common, None, None)?;
            commands::cmd_train_hhnn(&cfg)
        }
        Command::LabelSentences { common } => {
            let cfg = resolve(&common, None, None)?;
            commands::cmd_label_sentences(&cfg)
        }
        Command::TrainDsdrrm {
            common,
            sentence_corpus,
        } => {
            let cfg = resolve(&common, None, sentence_corpus)?;
            commands::cmd_train_dsdrrm(&cfg)
        }
        Command::Evaluate {
            common,
            head,
            seeds,
        } => {
            let cfg = resolve(&common, head, None)?;
            commands::cmd_evaluate(&cfg, seeds)
        }
        Command::ExtractFeatures { common } => {
            let cfg = resolve(&common, None, None)?;
            commands::cmd_extract_features(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
