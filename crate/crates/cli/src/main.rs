mod ablate;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use aann_core::detector::PhenomenonKind;
use aann_core::scoring::ScoreMode;
use aann_core::stimuli::ConstructionVariant;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::Condition;

/// Invalid flag combinations or config files; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "aann", version, about = "Detect, ablate and evaluate the AANN construction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find construction and phenomenon matches in CoNLL-U corpora.
    Detect(DetectArgs),
    /// Build an ablated or counterfactual corpus at token parity.
    Ablate(AblateArgs),
    /// Filter stimuli and emit an evaluation suite with all corruptions.
    Corrupt(CorruptArgs),
    /// Train a unigram (order 1) or modified Kneser-Ney n-gram model.
    TrainNgram(TrainArgs),
    /// Score a suite from external log-probs or an n-gram model.
    Score(ScoreArgs),
    /// Compute corruption accuracy from scores.
    Evaluate(EvaluateArgs),
    /// Collect evaluation reports into one plotting table.
    Report(ReportArgs),
}

fn parse_kind(s: &str) -> Result<PhenomenonKind, String> {
    s.parse().map_err(|e: aann_core::error::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<ConstructionVariant, String> {
    s.parse().map_err(|e: aann_core::error::Error| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// CoNLL-U files, read in order.
    #[arg(long = "input", short, required = true)]
    pub inputs: Vec<PathBuf>,
    /// Kinds to detect (comma separated); all kinds by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Vec<PhenomenonKind>,
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// TOML or JSON file with default settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "input", short)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub condition: Option<Condition>,
    /// Kinds removed by the `custom` condition.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Vec<PhenomenonKind>,
    #[arg(long, env = "AANN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
    /// Leave AANN utterances in place while ablating the other phenomenon.
    #[arg(long)]
    pub keep_aann: bool,
    /// Token budget for the `control` condition; defaults to what `balance` removes.
    #[arg(long)]
    pub control_tokens: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorruptArgs {
    /// Stimulus file, `.csv` or `.jsonl`.
    #[arg(long)]
    pub stimuli: PathBuf,
    /// Keep only items rated strictly above this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// CoNLL-U corpora; items whose construction occurs verbatim are dropped.
    #[arg(long)]
    pub overlap_corpus: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "AANN")]
    pub variants: Vec<ConstructionVariant>,
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Plain-text (one utterance per line) or `.conllu` files.
    #[arg(long = "input", short, required = true)]
    pub inputs: Vec<PathBuf>,
    /// 1 trains the unigram estimator; 2 to 4 train a Kneser-Ney model.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub order: u8,
    /// Additive smoothing for the unigram estimator.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Split lines on whitespace only (e.g. token-id streams).
    #[arg(long)]
    pub pretokenized: bool,
    /// Tokenizer tag recorded with a pretokenized model.
    #[arg(long, requires = "pretokenized")]
    pub tokenizer_tag: Option<String>,
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Slor,
    Logprob,
}

impl From<ModeArg> for ScoreMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Slor => ScoreMode::Slor,
            ModeArg::Logprob => ScoreMode::LogProb,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["logprobs", "model"])))]
pub struct ScoreArgs {
    /// Suite JSONL emitted by `corrupt`.
    #[arg(long)]
    pub suite: PathBuf,
    /// Log-prob exchange JSONL from an external model.
    #[arg(long)]
    pub logprobs: Option<PathBuf>,
    /// ARPA model from `train-ngram`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Unigram TSV from `train-ngram --order 1`; required for SLOR.
    #[arg(long)]
    pub unigram: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "slor")]
    pub mode: ModeArg,
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Scores JSONL from `score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value = "unspecified")]
    pub condition: String,
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Compare by the ratio of scores instead of their difference.
    #[arg(long)]
    pub literal_ratio: bool,
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Report JSON files from `evaluate`.
    #[arg(long = "input", short, required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match &cli.command {
        Command::Detect(args) => commands::detect(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Corrupt(args) => commands::corrupt(args),
        Command::TrainNgram(args) => commands::train_ngram(args),
        Command::Score(args) => commands::score(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
