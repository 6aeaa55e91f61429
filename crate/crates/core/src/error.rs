use std::path::PathBuf;

use crate::subgroup::Subgroup;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which kind of negative quota ran dry during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeQuota {
    Within,
    Cross,
}

impl std::fmt::Display for NegativeQuota {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NegativeQuota::Within => f.write_str("within-subgroup"),
            NegativeQuota::Cross => f.write_str("cross-subgroup"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("threshold policy has no entry for subgroup {0}")]
    MissingSubgroup(Subgroup),

    #[error("unknown face id `{0}`")]
    DanglingFace(String),

    #[error("{count} face id(s) missing from {side}: {shown}")]
    MissingFaces {
        side: &'static str,
        count: usize,
        shown: String,
    },

    #[error("duplicate face id `{0}`")]
    DuplicateFace(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("subject `{0}` has fewer than two faces")]
    UnusableSubject(String),

    #[error("subject `{subject}` has {available} faces, {required} required")]
    InsufficientFaces {
        subject: String,
        available: usize,
        required: usize,
    },

    #[error("{available} subjects cannot populate {folds} folds")]
    TooFewSubjects { available: usize, folds: usize },

    #[error("{quota} negative pool exhausted for {subgroup} in fold {fold}: {achieved}/{required} pairs")]
    PoolExhausted {
        subgroup: Subgroup,
        fold: u32,
        quota: NegativeQuota,
        achieved: usize,
        required: usize,
    },

    #[error("DET curve needs both genuine and imposter pairs")]
    SingleClass,

    #[error("no imposter pairs{}", .0.map(|s| format!(" for subgroup {s}")).unwrap_or_default())]
    NoImposters(Option<Subgroup>),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("checksum mismatch for {path}: expected {expected}, found {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl std::fmt::Display, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (files, manifests, flags)
    /// rather than by a pipeline stage failing on valid input.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::Config(_)
            | Error::MissingSubgroup(_)
            | Error::DanglingFace(_)
            | Error::MissingFaces { .. }
            | Error::DuplicateFace(_)
            | Error::EmptyDataset
            | Error::Parse { .. }
            | Error::Checksum { .. }
            | Error::Io { .. } => true,
            Error::Fold { source, .. } | Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
