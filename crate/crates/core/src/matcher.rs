//! Cosine-similarity matcher and the verification decision.

use rayon::prelude::*;

use crate::calibration::ThresholdPolicy;
use crate::error::{Error, Result};
use crate::face::{FaceTable, PairRecord, ScoredPair};
use crate::subgroup::Subgroup;

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if !(dot.is_finite() && na.is_finite() && nb.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature vector".into()));
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("zero-norm feature vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Element-wise mean of the features of a face and its mirror image.
pub fn fuse_features(original: &[f64], flipped: &[f64]) -> Result<Vec<f64>> {
    check_dims(original, flipped)?;
    Ok(original.iter().zip(flipped).map(|(x, y)| (x + y) / 2.0).collect())
}

/// Match decision: `score >= threshold`, the threshold resolved by the
/// query face's subgroup.
pub fn verify(score: f64, query: Subgroup, policy: &ThresholdPolicy) -> Result<bool> {
    Ok(score >= policy.threshold_for(query)?)
}

fn score_one(pair: &PairRecord, faces: &FaceTable) -> Result<ScoredPair> {
    let a = faces.resolve(&pair.face_a)?;
    let b = faces.resolve(&pair.face_b)?;
    Ok(ScoredPair {
        pair: pair.clone(),
        score: cosine_similarity(&a.feature, &b.feature)?,
    })
}

/// Scores every pair, in order, across the rayon pool.
pub fn score_pairs(pairs: &[PairRecord], faces: &FaceTable) -> Result<Vec<ScoredPair>> {
    pairs.par_iter().map(|p| score_one(p, faces)).collect()
}

/// Single-threaded reference for [`score_pairs`].
pub fn score_pairs_serial(pairs: &[PairRecord], faces: &FaceTable) -> Result<Vec<ScoredPair>> {
    pairs.iter().map(|p| score_one(p, faces)).collect()
}
