use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {record}: {message}")]
    Record { record: usize, message: String },

    #[error("unknown sentence id `{0}`")]
    UnknownSentence(String),

    #[error("match in sentence `{sentence_id}` at {start}..={end} is missing slot `{slot}`")]
    MissingSlot {
        sentence_id: String,
        start: usize,
        end: usize,
        slot: &'static str,
    },

    #[error("stimulus `{item}`: {message}")]
    Stimulus { item: String, message: String },

    #[error("requested {requested} tokens but unprotected utterances only hold {available}")]
    InsufficientTokens { requested: u64, available: u64 },

    #[error("target of {target} tokens is below the current count of {current}")]
    TargetBelowCurrent { target: u64, current: u64 },

    #[error("no eligible utterances to sample from")]
    NoEligibleUtterances,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing log-prob records: {}", format_missing(.0))]
    MissingLogProbs(Vec<(String, String)>),

    #[error("tokenizer mismatch: records use `{records}`, unigram model uses `{unigram}`")]
    TokenizerMismatch { records: String, unigram: String },

    #[error("manifest replay failed: {0}")]
    Replay(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn format_missing(keys: &[(String, String)]) -> String {
    keys.iter()
        .map(|(item, variant)| format!("({item}, {variant})"))
        .collect::<Vec<_>>()
        .join(", ")
}
