use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is zero (or below 1e-12)")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("no lexicon word has an embedding")]
    NoOverlap,
    #[error("text has no tokens")]
    EmptyText,
    #[error("training labels are empty")]
    EmptyTraining,
    #[error("invalid lexicon score for {word:?}: {score}")]
    InvalidScore { word: String, score: f64 },

    #[error("invalid thresholds: t_pos ({t_pos}) must exceed t_neg ({t_neg})")]
    InvalidThresholds { t_pos: f64, t_neg: f64 },
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid fractions: top {top}, bottom {bottom}")]
    InvalidFractions { top: f64, bottom: f64 },
    #[error("rating {0} outside 1..=7")]
    InvalidRating(i64),
    #[error("invalid page {page_id:?}: {reason}")]
    InvalidPage { page_id: String, reason: String },

    #[error("classification threshold {0} outside [0, 2]")]
    InvalidThreshold(f64),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("corpus needs at least one visual and one non-visual example")]
    DegenerateCorpus,
    #[error("image {0:?} not found in the image bank")]
    UnresolvedImage(String),
    #[error("training produced a non-finite parameter (stage {stage}, epoch {epoch})")]
    AbortNaN { stage: u32, epoch: usize },
    #[error("calibration needs both classes present")]
    SingleClass,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input must not be empty")]
    Empty,
    #[error("rank must be >= 1, got {0}")]
    InvalidRank(usize),
    #[error("input is constant")]
    ConstantInput,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("image {0:?} missing from bank")]
    MissingImage(String),

    #[error("missing fixture: {0}")]
    MissingFixture(PathBuf),
    #[error("{0} fixture(s) failed")]
    FixturesFailed(usize),
    #[error("missing resource: {0}")]
    MissingResource(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.to_string(),
        }
    }

    /// Process exit code for the command-line tool: 2 input/parse, 3 domain
    /// precondition, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Checkpoint(_)
            | Error::MissingFixture(_)
            | Error::MissingResource(_)
            | Error::InvalidPage { .. }
            | Error::InvalidScore { .. }
            | Error::InvalidRating(_)
            | Error::EmptyInput => 2,
            Error::AbortNaN { .. } | Error::NonFinite(_) | Error::ZeroVector => 4,
            _ => 3,
        }
    }
}
