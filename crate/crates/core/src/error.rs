use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum DstError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("duplicate slot name `{0}`")]
    DuplicateSlot(String),

    #[error("duplicate domain `{0}`")]
    DuplicateDomain(String),

    #[error("categorical slot `{slot}` needs at least 2 distinct candidate values, found {found}")]
    TooFewCandidates { slot: String, found: usize },

    #[error("non-categorical slot `{0}` must not declare candidate values")]
    UnexpectedCandidates(String),

    #[error("slot `{slot}` references unknown domain `{domain}`")]
    UnknownDomain { slot: String, domain: String },

    #[error("unknown slot `{slot}` in dialogue `{dialogue}`")]
    UnknownSlot { dialogue: String, slot: String },

    #[error("malformed dialogue `{dialogue}`: {message}")]
    MalformedDialogue { dialogue: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty utterance pool")]
    EmptyPool,

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("most recent turn has {tokens} tokens, exceeding the sequence cap of {cap}")]
    TurnTooLong { tokens: usize, cap: usize },

    #[error("slot `{slot}` is {kind}, operation requires {expected}")]
    WrongSlotKind {
        slot: String,
        kind: &'static str,
        expected: &'static str,
    },

    #[error("missing predictions for {} gold turn(s): {}", .0.len(), format_keys(.0))]
    MissingPredictions(Vec<(String, usize)>),

    #[error("reports were computed on different corpora ({before} vs {after})")]
    CorpusMismatch { before: String, after: String },

    #[error("non-finite loss {value} at step {step}")]
    Diverged { step: usize, value: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn format_keys(keys: &[(String, usize)]) -> String {
    let mut shown: Vec<String> = keys
        .iter()
        .take(8)
        .map(|(d, t)| format!("({d}, {t})"))
        .collect();
    if keys.len() > 8 {
        shown.push("...".to_string());
    }
    shown.join(", ")
}

impl DstError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DstError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        DstError::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DstError>;
