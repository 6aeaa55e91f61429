//! Turns a labeled embedding corpus into a validated, balanced,
//! identity-disjoint K-fold pair list.
//!
//! The stages run in a fixed order:
//!
//! 1. **Prune.** For each subject, the all-pairs cosine matrix of its faces is
//!    built and a face is dropped when the nearest-rank percentile of its row
//!    (diagonal excluded) falls below the prune threshold.
//! 2. **Sample.** A fixed number of retained faces is drawn per subject,
//!    without replacement. Subjects with too few faces are excluded and
//!    reported.
//! 3. **Assign folds.** Within each subgroup, subjects are sorted by positive
//!    pair count (descending, ties by subject id) and dealt round-robin.
//! 4. **Pairs.** Every same-subject face pair is a positive. Per subgroup and
//!    fold, within-subgroup negatives are drawn to match the positive count,
//!    then the same number again of cross-subgroup negatives.
//!
//! All randomness comes from [`CurationConfig::seed`], so a rerun produces
//! the same pair list.

use std::collections::{BTreeMap, HashSet};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NegativeQuota, Result};
use crate::face::{FaceTable, PairKind, PairRecord};
use crate::matcher::cosine_similarity;
use crate::stats::{percentile_sorted, rng_for, Rng};
use crate::subgroup::Subgroup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub prune_threshold: f64,
    pub prune_percentile: u32,
    pub faces_per_subject: usize,
    pub folds: u32,
    /// Set from the run seed, never read from a manifest.
    #[serde(skip)]
    pub seed: u64,
    /// Scales both negative quotas relative to the positive count.
    pub negative_multiplier: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            prune_threshold: 0.2,
            prune_percentile: 50,
            faces_per_subject: 25,
            folds: 5,
            seed: 0,
            negative_multiplier: 1.0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.faces_per_subject < 2 {
            return Err(Error::Config(format!(
                "faces_per_subject must be >= 2, got {}",
                self.faces_per_subject
            )));
        }
        if !(-1.0..=1.0).contains(&self.prune_threshold) {
            return Err(Error::Config(format!(
                "prune_threshold must lie in [-1, 1], got {}",
                self.prune_threshold
            )));
        }
        if self.prune_percentile == 0 || self.prune_percentile > 100 {
            return Err(Error::Config(format!(
                "prune_percentile must lie in (0, 100], got {}",
                self.prune_percentile
            )));
        }
        if !(self.negative_multiplier.is_finite() && self.negative_multiplier >= 0.0) {
            return Err(Error::Config("negative_multiplier must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// All-pairs cosine similarity matrix.
pub fn similarity_matrix(features: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let n = features.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_similarity(features[i], features[j])?;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneOutcome {
    /// Row indices kept, ascending.
    pub retained: Vec<usize>,
    /// Row indices dropped, each with the row percentile that failed.
    pub removed: Vec<(usize, f64)>,
}

/// Prunes one subject given the similarity matrix of its faces.
pub fn prune_subject(subject: &str, scores: &[Vec<f64>], cfg: &CurationConfig) -> Result<PruneOutcome> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::UnusableSubject(subject.to_string()));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: row.len(),
        });
    }
    let mut out = PruneOutcome::default();
    for (i, row) in scores.iter().enumerate() {
        let mut others: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &s)| s)
            .collect();
        others.sort_by(f64::total_cmp);
        let p = percentile_sorted(&others, f64::from(cfg.prune_percentile)).unwrap_or(f64::NAN);
        if p < cfg.prune_threshold {
            out.removed.push((i, p));
        } else {
            out.retained.push(i);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedFace {
    pub face_id: String,
    pub subject_id: String,
    pub row_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSubject {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct PruneReport {
    /// Retained face indices (into the face table) per subject.
    pub retained: BTreeMap<String, Vec<usize>>,
    pub removed: Vec<RemovedFace>,
    pub unusable: Vec<ExcludedSubject>,
}

/// Runs [`prune_subject`] over every subject of the table.
pub fn prune(faces: &FaceTable, cfg: &CurationConfig) -> Result<PruneReport> {
    let subjects: Vec<(&str, Vec<usize>)> = faces.by_subject().into_iter().collect();
    type Outcome = Result<(String, Vec<usize>, Vec<RemovedFace>)>;
    let outcomes: Vec<Outcome> = subjects
        .par_iter()
        .map(|(subject, idx)| {
            let feats: Vec<&[f64]> = idx.iter().map(|&i| faces.records()[i].feature.as_slice()).collect();
            let m = similarity_matrix(&feats)?;
            let o = prune_subject(subject, &m, cfg)?;
            let kept = o.retained.iter().map(|&r| idx[r]).collect();
            let removed = o
                .removed
                .iter()
                .map(|&(r, p)| RemovedFace {
                    face_id: faces.records()[idx[r]].face_id.clone(),
                    subject_id: subject.to_string(),
                    row_percentile: p,
                })
                .collect();
            Ok((subject.to_string(), kept, removed))
        })
        .collect();

    let mut report = PruneReport::default();
    for o in outcomes {
        match o {
            Ok((subject, kept, removed)) => {
                report.retained.insert(subject, kept);
                report.removed.extend(removed);
            }
            Err(Error::UnusableSubject(subject)) => report.unusable.push(ExcludedSubject {
                reason: "fewer than two faces".into(),
                subject_id: subject,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Uniform sample of `n` items without replacement, returned in input order.
pub fn sample_faces<T: Clone>(subject: &str, faces: &[T], n: usize, rng: &mut Rng) -> Result<Vec<T>> {
    if faces.len() < n {
        return Err(Error::InsufficientFaces {
            subject: subject.to_string(),
            available: faces.len(),
            required: n,
        });
    }
    let mut picked = rand::seq::index::sample(rng, faces.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| faces[i].clone()).collect())
}

/// The sampled faces of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSample {
    pub subject_id: String,
    pub subgroup: Subgroup,
    pub face_ids: Vec<String>,
}

impl SubjectSample {
    pub fn positive_pair_count(&self) -> u64 {
        let n = self.face_ids.len() as u64;
        n * n.saturating_sub(1) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldAssignment {
    pub folds: u32,
    pub by_subject: BTreeMap<String, u32>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<u32> {
        self.by_subject.get(subject).copied()
    }

    pub fn subjects_in(&self, fold: u32) -> impl Iterator<Item = &str> {
        self.by_subject
            .iter()
            .filter(move |(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
    }

    /// Merges another assignment over disjoint subjects.
    pub fn extend(&mut self, other: FoldAssignment) -> Result<()> {
        if self.folds != 0 && self.folds != other.folds {
            return Err(Error::Config("cannot merge fold assignments with different K".into()));
        }
        self.folds = other.folds;
        for (s, f) in other.by_subject {
            if self.by_subject.insert(s.clone(), f).is_some() {
                return Err(Error::InvalidInput(format!("subject `{s}` assigned twice")));
            }
        }
        Ok(())
    }
}

/// Sorts subjects by descending pair count (ties by id) and deals them
/// round-robin into folds `1..=k`.
pub fn assign_folds(counts: &[(String, u64)], k: u32) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("folds must be >= 2, got {k}")));
    }
    if counts.len() < k as usize {
        return Err(Error::TooFewSubjects {
            available: counts.len(),
            folds: k as usize,
        });
    }
    let mut order: Vec<&(String, u64)> = counts.iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut by_subject = BTreeMap::new();
    for (i, (subject, _)) in order.into_iter().enumerate() {
        if by_subject.insert(subject.clone(), (i as u32 % k) + 1).is_some() {
            return Err(Error::InvalidInput(format!("subject `{subject}` listed twice")));
        }
    }
    Ok(FoldAssignment { folds: k, by_subject })
}

/// Every unordered same-subject pair, once, tagged with the subject's fold.
pub fn generate_positive_pairs(subjects: &[SubjectSample], folds: &FoldAssignment) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for s in subjects {
        let fold = folds
            .fold_of(&s.subject_id)
            .ok_or_else(|| Error::InvalidInput(format!("subject `{}` has no fold", s.subject_id)))?;
        for (i, a) in s.face_ids.iter().enumerate() {
            for b in &s.face_ids[i + 1..] {
                out.push(PairRecord::new(a.as_str(), b.as_str(), PairKind::Positive, fold));
            }
        }
    }
    Ok(out)
}

/// A sampled face as seen by negative sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldFace {
    pub face_id: String,
    pub subject_id: String,
}

/// Draws imposter pairs for one fold.
///
/// For each subgroup with `q = round(positives · multiplier)`: `q`
/// within-subgroup pairs of different subjects, then `q` cross-subgroup
/// pairs whose first face is in the subgroup and second face is anywhere
/// else in the fold. No unordered pair is emitted twice within the fold.
/// Rejection sampling gives up after `100 · q` draws per quota.
pub fn sample_negative_pairs(
    fold: u32,
    faces: &BTreeMap<Subgroup, Vec<FoldFace>>,
    positive_counts: &BTreeMap<Subgroup, usize>,
    multiplier: f64,
    rng: &mut Rng,
) -> Result<Vec<PairRecord>> {
    // Flatten so every face has a fold-local index.
    let mut flat: Vec<(&FoldFace, Subgroup)> = Vec::new();
    let mut ranges: BTreeMap<Subgroup, std::ops::Range<usize>> = BTreeMap::new();
    for (&sg, list) in faces {
        let start = flat.len();
        flat.extend(list.iter().map(|f| (f, sg)));
        ranges.insert(sg, start..flat.len());
    }

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut out = Vec::new();
    for (&sg, &positives) in positive_counts {
        let quota = (positives as f64 * multiplier).round() as usize;
        if quota == 0 {
            continue;
        }
        let inside = ranges.get(&sg).cloned().unwrap_or(0..0);
        let outside: Vec<usize> = (0..flat.len()).filter(|i| !inside.contains(i)).collect();
        let max_attempts = quota.saturating_mul(100);

        for kind in [NegativeQuota::Within, NegativeQuota::Cross] {
            let mut achieved = 0;
            let mut attempts = 0;
            while achieved < quota && attempts < max_attempts {
                attempts += 1;
                if inside.is_empty() {
                    break;
                }
                let a = rng.random_range(inside.clone());
                let b = match kind {
                    NegativeQuota::Within => rng.random_range(inside.clone()),
                    NegativeQuota::Cross => {
                        if outside.is_empty() {
                            break;
                        }
                        outside[rng.random_range(0..outside.len())]
                    }
                };
                if flat[a].0.subject_id == flat[b].0.subject_id {
                    continue;
                }
                if !seen.insert((a.min(b), a.max(b))) {
                    continue;
                }
                let pk = match kind {
                    NegativeQuota::Within => PairKind::NegativeWithin,
                    NegativeQuota::Cross => PairKind::NegativeCross,
                };
                out.push(PairRecord::new(
                    flat[a].0.face_id.as_str(),
                    flat[b].0.face_id.as_str(),
                    pk,
                    fold,
                ));
                achieved += 1;
            }
            if achieved < quota {
                return Err(Error::PoolExhausted {
                    subgroup: sg,
                    fold,
                    quota: kind,
                    achieved,
                    required: quota,
                });
            }
        }
    }
    Ok(out)
}

/// Output of [`curate`].
#[derive(Debug, Clone, Default)]
pub struct Curation {
    pub removed: Vec<RemovedFace>,
    pub excluded: Vec<ExcludedSubject>,
    pub samples: Vec<SubjectSample>,
    pub folds: FoldAssignment,
    /// Fold-major: each fold's positives, then its negatives.
    pub pairs: Vec<PairRecord>,
}

/// Runs the full curation pipeline.
pub fn curate(faces: &FaceTable, cfg: &CurationConfig) -> Result<Curation> {
    cfg.validate()?;
    if faces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pruned = prune(faces, cfg)?;
    let mut out = Curation {
        removed: pruned.removed,
        excluded: pruned.unusable,
        ..Default::default()
    };

    let records = faces.records();
    let all_by_subject = faces.by_subject();
    let mut rng = rng_for(cfg.seed, "curation/sample");
    for (subject, kept) in &pruned.retained {
        let all = &all_by_subject[subject.as_str()];
        let subgroup = records[all[0]].subgroup;
        if let Some(&i) = all.iter().find(|&&i| records[i].subgroup != subgroup) {
            return Err(Error::InvalidInput(format!(
                "subject `{subject}` spans subgroups ({subgroup} and {})",
                records[i].subgroup
            )));
        }
        match sample_faces(subject, kept, cfg.faces_per_subject, &mut rng) {
            Ok(idx) => out.samples.push(SubjectSample {
                subject_id: subject.clone(),
                subgroup,
                face_ids: idx.iter().map(|&i| records[i].face_id.clone()).collect(),
            }),
            Err(e @ Error::InsufficientFaces { .. }) => out.excluded.push(ExcludedSubject {
                subject_id: subject.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }

    let mut by_subgroup: BTreeMap<Subgroup, Vec<&SubjectSample>> =
        faces.subgroup_counts().into_keys().map(|sg| (sg, Vec::new())).collect();
    for s in &out.samples {
        by_subgroup.entry(s.subgroup).or_default().push(s);
    }
    out.folds = FoldAssignment {
        folds: cfg.folds,
        by_subject: BTreeMap::new(),
    };
    for (sg, list) in &by_subgroup {
        let counts: Vec<(String, u64)> = list
            .iter()
            .map(|s| (s.subject_id.clone(), s.positive_pair_count()))
            .collect();
        let assigned = assign_folds(&counts, cfg.folds).map_err(|e| match e {
            Error::TooFewSubjects { available, folds } => Error::Config(format!(
                "subgroup {sg} has {available} usable subjects, fewer than {folds} folds"
            )),
            e => e,
        })?;
        out.folds.extend(assigned)?;
    }

    let mut neg_rng = rng_for(cfg.seed, "curation/negatives");
    for fold in 1..=cfg.folds {
        let in_fold: Vec<SubjectSample> = out
            .samples
            .iter()
            .filter(|s| out.folds.fold_of(&s.subject_id) == Some(fold))
            .cloned()
            .collect();
        let positives = generate_positive_pairs(&in_fold, &out.folds)?;
        let mut counts: BTreeMap<Subgroup, usize> = BTreeMap::new();
        let mut fold_faces: BTreeMap<Subgroup, Vec<FoldFace>> = BTreeMap::new();
        for s in &in_fold {
            *counts.entry(s.subgroup).or_default() += s.positive_pair_count() as usize;
            fold_faces
                .entry(s.subgroup)
                .or_default()
                .extend(s.face_ids.iter().map(|f| FoldFace {
                    face_id: f.clone(),
                    subject_id: s.subject_id.clone(),
                }));
        }
        let negatives = sample_negative_pairs(fold, &fold_faces, &counts, cfg.negative_multiplier, &mut neg_rng)?;
        out.pairs.extend(positives);
        out.pairs.extend(negatives);
    }
    Ok(out)
}

/// Faces, subjects and pair counts per subgroup, keyed by the first face's subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub faces: usize,
    pub subjects: usize,
    pub positive: usize,
    pub negative: usize,
}

pub fn pair_counts(pairs: &[PairRecord], faces: &FaceTable) -> Result<BTreeMap<Subgroup, PairCounts>> {
    let mut out: BTreeMap<Subgroup, PairCounts> = BTreeMap::new();
    let mut used_faces: BTreeMap<Subgroup, HashSet<&str>> = BTreeMap::new();
    let mut used_subjects: BTreeMap<Subgroup, HashSet<&str>> = BTreeMap::new();
    for p in pairs {
        let a = faces.resolve(&p.face_a)?;
        let b = faces.resolve(&p.face_b)?;
        let c = out.entry(a.subgroup).or_default();
        match p.kind {
            PairKind::Positive => c.positive += 1,
            _ => c.negative += 1,
        }
        for f in [a, b] {
            used_faces.entry(f.subgroup).or_default().insert(&f.face_id);
            used_subjects.entry(f.subgroup).or_default().insert(&f.subject_id);
        }
    }
    for (sg, c) in out.iter_mut() {
        c.faces = used_faces.get(sg).map_or(0, HashSet::len);
        c.subjects = used_subjects.get(sg).map_or(0, HashSet::len);
    }
    Ok(out)
}

/// Result of [`check_fold_hygiene`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FoldHygiene {
    /// Subjects whose faces appear in pairs of more than one fold.
    pub subjects_in_multiple_folds: Vec<String>,
    /// Pairs whose faces belong to subjects of different folds.
    pub pairs_spanning_folds: usize,
}

impl FoldHygiene {
    pub fn is_clean(&self) -> bool {
        self.subjects_in_multiple_folds.is_empty() && self.pairs_spanning_folds == 0
    }
}

/// Checks that every subject occupies exactly one fold of the pair list.
pub fn check_fold_hygiene(pairs: &[PairRecord], faces: &FaceTable) -> Result<FoldHygiene> {
    let mut folds_of: BTreeMap<&str, std::collections::BTreeSet<u32>> = BTreeMap::new();
    for p in pairs {
        for id in [&p.face_a, &p.face_b] {
            let f = faces.resolve(id)?;
            folds_of.entry(&f.subject_id).or_default().insert(p.fold);
        }
    }
    let subjects_in_multiple_folds: Vec<String> = folds_of
        .iter()
        .filter(|(_, f)| f.len() > 1)
        .map(|(s, _)| s.to_string())
        .collect();
    let bad: HashSet<&str> = subjects_in_multiple_folds.iter().map(String::as_str).collect();
    let pairs_spanning_folds = pairs
        .iter()
        .filter(|p| {
            [&p.face_a, &p.face_b]
                .iter()
                .any(|id| faces.get(id).is_some_and(|f| bad.contains(f.subject_id.as_str())))
        })
        .count();
    Ok(FoldHygiene {
        subjects_in_multiple_folds,
        pairs_spanning_folds,
    })
}

/// Subjects seen both in an evaluation fold and in the folds its thresholds
/// were calibrated on, as `(evaluation fold, subject)` pairs.
pub fn calibration_overlap(
    pairs: &[PairRecord],
    faces: &FaceTable,
    calibration_folds: &BTreeMap<u32, Vec<u32>>,
) -> Result<Vec<(u32, String)>> {
    let mut subjects: BTreeMap<u32, std::collections::BTreeSet<&str>> = BTreeMap::new();
    for p in pairs {
        for id in [&p.face_a, &p.face_b] {
            subjects
                .entry(p.fold)
                .or_default()
                .insert(&faces.resolve(id)?.subject_id);
        }
    }
    let mut out = Vec::new();
    for (&eval, cal) in calibration_folds {
        let Some(held_out) = subjects.get(&eval) else { continue };
        let mut seen: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for c in cal.iter().filter(|&&c| c != eval) {
            if let Some(s) = subjects.get(c) {
                seen.extend(s);
            }
        }
        out.extend(held_out.intersection(&seen).map(|s| (eval, s.to_string())));
    }
    Ok(out)
}
