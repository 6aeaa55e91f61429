//! Demographic bias audit for embedding-based face verification.
//!
//! The crate covers the whole evaluation loop: validating and sampling a
//! labeled embedding corpus into identity-disjoint folds of verification
//! pairs ([`curation`]), scoring pairs by cosine similarity ([`matcher`]),
//! DET / TAR@FAR / rank-1 / score-distribution metrics ([`metrics`]), and
//! learning global or per-subgroup decision thresholds for an intended
//! false positive rate ([`calibration`]). [`synth`] generates deterministic
//! embeddings and scores for testing, [`io`] and [`pipeline`] back the
//! `facebias` command-line tool.

pub mod calibration;
pub mod curation;
pub mod error;
pub mod face;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod stats;
pub mod subgroup;
pub mod synth;

pub use calibration::{PolicyKind, PolicyMode, Protocol, ThresholdPolicy};
pub use error::{Error, Result};
pub use face::{FaceRecord, FaceTable, Label, PairKind, PairRecord, ScoredPair};
pub use subgroup::{Ethnicity, Gender, Subgroup};
