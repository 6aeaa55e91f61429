//! Verification metrics: confusion counts, DET curves, TAR@FAR, score
//! distribution summaries, rank-1 confusion and percent difference from an
//! intended FPR.
//!
//! Every threshold decision uses `score >= threshold` as a match. FAR and
//! FPR are the same quantity here: the fraction of imposter pairs accepted.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{FaceTable, Label, ScoredPair};
use crate::stats::percentile_sorted;
use crate::subgroup::Subgroup;

/// Scores split by label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledScores {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

impl LabeledScores {
    pub fn push(&mut self, label: Label, score: f64) {
        match label {
            Label::Genuine => self.genuine.push(score),
            Label::Imposter => self.imposter.push(score),
        }
    }

    pub fn len(&self) -> usize {
        self.genuine.len() + self.imposter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extend(&mut self, other: &LabeledScores) {
        self.genuine.extend_from_slice(&other.genuine);
        self.imposter.extend_from_slice(&other.imposter);
    }

    pub fn sorted(&self) -> SortedScores {
        SortedScores::new(self)
    }
}

impl From<&[ScoredPair]> for LabeledScores {
    fn from(pairs: &[ScoredPair]) -> Self {
        let mut out = LabeledScores::default();
        for p in pairs {
            out.push(p.pair.label, p.score);
        }
        out
    }
}

/// Scores keyed by the query (first) face's subgroup.
pub type SubgroupScores = BTreeMap<Subgroup, LabeledScores>;

/// Splits scored pairs by the subgroup of their first face.
pub fn group_by_query(scored: &[ScoredPair], faces: &FaceTable) -> Result<SubgroupScores> {
    let mut out = SubgroupScores::new();
    for p in scored {
        let q = faces.resolve(&p.pair.face_a)?;
        out.entry(q.subgroup).or_default().push(p.pair.label, p.score);
    }
    Ok(out)
}

/// Like [`group_by_query`], additionally split by fold.
pub fn group_by_fold(scored: &[ScoredPair], faces: &FaceTable) -> Result<BTreeMap<u32, SubgroupScores>> {
    group_by_fold_with(scored, |id| faces.resolve(id).map(|f| f.subgroup))
}

/// Fold and subgroup grouping with a caller-supplied subgroup lookup.
pub fn group_by_fold_with(
    scored: &[ScoredPair],
    subgroup_of: impl Fn(&str) -> Result<Subgroup>,
) -> Result<BTreeMap<u32, SubgroupScores>> {
    let mut out: BTreeMap<u32, SubgroupScores> = BTreeMap::new();
    for p in scored {
        let sg = subgroup_of(&p.pair.face_a)?;
        out.entry(p.pair.fold)
            .or_default()
            .entry(sg)
            .or_default()
            .push(p.pair.label, p.score);
    }
    Ok(out)
}

/// Pools all subgroups into one set.
pub fn pool(groups: &SubgroupScores) -> LabeledScores {
    let mut out = LabeledScores::default();
    for s in groups.values() {
        out.extend(s);
    }
    out
}

/// Ascending copies of both score lists, for repeated threshold queries.
#[derive(Debug, Clone)]
pub struct SortedScores {
    genuine: Vec<f64>,
    imposter: Vec<f64>,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn count_at_or_above(sorted: &[f64], threshold: f64) -> u64 {
    (sorted.len() - sorted.partition_point(|&s| s < threshold)) as u64
}

impl SortedScores {
    pub fn new(scores: &LabeledScores) -> Self {
        SortedScores {
            genuine: sorted(&scores.genuine),
            imposter: sorted(&scores.imposter),
        }
    }

    pub fn confusion_at(&self, threshold: f64) -> ConfusionCounts {
        let tp = count_at_or_above(&self.genuine, threshold);
        let fp = count_at_or_above(&self.imposter, threshold);
        ConfusionCounts {
            tp,
            fn_: self.genuine.len() as u64 - tp,
            fp,
            tn: self.imposter.len() as u64 - fp,
        }
    }

    /// Distinct scores of both classes, ascending.
    pub fn distinct_scores(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.genuine.iter().chain(&self.imposter).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// `fp / (fp + tn)`; NaN without imposters.
    pub fn fpr(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn) as f64
    }

    /// `fn / (tp + fn)`; NaN without genuine pairs.
    pub fn fnr(&self) -> f64 {
        self.fn_ as f64 / (self.tp + self.fn_) as f64
    }

    /// `tp / (tp + fn)`.
    pub fn tar(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }
}

pub fn confusion_at(scores: &LabeledScores, threshold: f64) -> ConfusionCounts {
    let tp = scores.genuine.iter().filter(|&&s| s >= threshold).count() as u64;
    let fp = scores.imposter.iter().filter(|&&s| s >= threshold).count() as u64;
    ConfusionCounts {
        tp,
        fn_: scores.genuine.len() as u64 - tp,
        fp,
        tn: scores.imposter.len() as u64 - fp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetCurve {
    /// Strictly increasing thresholds.
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    /// Drops points that move neither FPR by more than `rel_fpr` (relative)
    /// nor FNR by more than `abs_fnr` (absolute) from the last kept point.
    /// Both end points are always kept.
    pub fn thinned(&self, rel_fpr: f64, abs_fnr: f64) -> DetCurve {
        let mut points: Vec<DetPoint> = Vec::new();
        let n = self.points.len();
        for (i, p) in self.points.iter().enumerate() {
            let keep = match points.last() {
                None => true,
                Some(_) if i + 1 == n => true,
                Some(last) => (p.fpr - last.fpr).abs() > rel_fpr * last.fpr || (p.fnr - last.fnr).abs() > abs_fnr,
            };
            if keep {
                points.push(*p);
            }
        }
        DetCurve { points }
    }
}

/// DET curve over `grid`, or by default over every distinct observed score
/// bracketed by `-inf` and `+inf`.
pub fn det_curve(scores: &LabeledScores, grid: Option<&[f64]>) -> Result<DetCurve> {
    if scores.genuine.is_empty() || scores.imposter.is_empty() {
        return Err(Error::SingleClass);
    }
    let sorted = scores.sorted();
    let thresholds: Vec<f64> = match grid {
        Some(g) => {
            if g.iter().any(|t| t.is_nan()) {
                return Err(Error::InvalidInput("NaN in threshold grid".into()));
            }
            let mut g = g.to_vec();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        }
        None => {
            let mut g = Vec::with_capacity(scores.len() + 2);
            g.push(f64::NEG_INFINITY);
            g.extend(sorted.distinct_scores());
            g.push(f64::INFINITY);
            g
        }
    };
    let points = thresholds
        .into_iter()
        .map(|t| {
            let c = sorted.confusion_at(t);
            DetPoint {
                threshold: t,
                fpr: c.fpr(),
                fnr: c.fnr(),
                counts: c,
            }
        })
        .collect();
    Ok(DetCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far_target: f64,
    pub achieved_far: f64,
    pub tar: f64,
    pub threshold: f64,
}

/// For each FAR target, the smallest DET threshold with FPR at or below the
/// target, and the TAR there. No interpolation.
pub fn tar_at_far(scores: &LabeledScores, far_targets: &[f64]) -> Result<Vec<TarAtFar>> {
    if far_targets.is_empty() {
        return Ok(Vec::new());
    }
    if scores.imposter.is_empty() {
        return Err(Error::NoImposters(None));
    }
    let curve = det_curve(scores, None)?;
    far_targets
        .iter()
        .map(|&target| {
            if !(target.is_finite() && target >= 0.0) {
                return Err(Error::InvalidInput(format!("invalid FAR target {target}")));
            }
            // FPR is non-increasing along the curve and the +inf sentinel has FPR 0.
            let i = curve.points.partition_point(|p| p.fpr > target);
            let p = curve.points[i];
            Ok(TarAtFar {
                far_target: target,
                achieved_far: p.fpr,
                tar: p.counts.tar(),
                threshold: p.threshold,
            })
        })
        .collect()
}

/// Rank-1 errors tallied by (probe subgroup, neighbor subgroup).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Rank1Confusion {
    /// Probe count per subgroup, indexed by [`Subgroup::index`].
    pub probes: Vec<u64>,
    /// `errors[probe][neighbor]`.
    pub errors: Vec<Vec<u64>>,
}

impl Rank1Confusion {
    fn empty() -> Self {
        Rank1Confusion {
            probes: vec![0; Subgroup::COUNT],
            errors: vec![vec![0; Subgroup::COUNT]; Subgroup::COUNT],
        }
    }

    /// Cell as a percentage of the probe subgroup's probes.
    pub fn percent(&self, probe: Subgroup, neighbor: Subgroup) -> f64 {
        let n = self.probes[probe.index()];
        if n == 0 {
            return 0.0;
        }
        100.0 * self.errors[probe.index()][neighbor.index()] as f64 / n as f64
    }

    pub fn row_percent(&self, probe: Subgroup) -> f64 {
        Subgroup::ALL.iter().map(|&n| self.percent(probe, n)).sum()
    }

    pub fn total_errors(&self) -> u64 {
        self.errors.iter().flatten().sum()
    }

    pub fn diagonal_errors(&self) -> u64 {
        (0..Subgroup::COUNT).map(|i| self.errors[i][i]).sum()
    }
}

/// Index of the most similar other face; ties go to the lowest index.
fn nearest_other(units: &[Vec<f64>], probe: usize) -> Option<usize> {
    let u = &units[probe];
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in units.iter().enumerate() {
        if j == probe {
            continue;
        }
        let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
}

/// Leave-one-out nearest neighbor over the whole table. A probe is an error
/// when its neighbor belongs to another subject.
pub fn rank1_confusion(faces: &FaceTable) -> Result<Rank1Confusion> {
    if faces.len() < 2 {
        return Err(Error::InvalidInput("rank-1 search needs at least two faces".into()));
    }
    let units: Vec<Vec<f64>> = faces
        .iter()
        .map(|f| {
            let n = f.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
            f.feature.iter().map(|x| x / n).collect()
        })
        .collect();
    let neighbors: Vec<usize> = (0..units.len())
        .into_par_iter()
        .map(|i| nearest_other(&units, i).expect("at least two faces"))
        .collect();
    let records = faces.records();
    let mut out = Rank1Confusion::empty();
    for (i, &j) in neighbors.iter().enumerate() {
        let (p, n) = (&records[i], &records[j]);
        out.probes[p.subgroup.index()] += 1;
        if p.subject_id != n.subject_id {
            out.errors[p.subgroup.index()][n.subgroup.index()] += 1;
        }
    }
    Ok(out)
}

pub const SDM_BINS: usize = 100;
pub const SDM_BIN_WIDTH: f64 = 0.02;
pub const SDM_PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

/// Histogram bin of a score on `[-1, 1]`; `1.0` lands in the last bin.
pub fn sdm_bin(score: f64) -> usize {
    (((score + 1.0) * 50.0).floor().max(0.0) as usize).min(SDM_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdmEntry {
    pub subgroup: Subgroup,
    pub label: Label,
    pub count: usize,
    pub histogram: Vec<u64>,
    /// Values at [`SDM_PERCENTILES`]; empty when `count == 0`.
    pub percentiles: Vec<f64>,
}

impl SdmEntry {
    pub fn median(&self) -> Option<f64> {
        self.percentiles.get(2).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SdmSummary {
    pub entries: Vec<SdmEntry>,
}

fn sdm_entry(subgroup: Subgroup, label: Label, scores: &[f64]) -> SdmEntry {
    let mut histogram = vec![0u64; SDM_BINS];
    for &s in scores {
        histogram[sdm_bin(s)] += 1;
    }
    let sorted = sorted(scores);
    let percentiles = SDM_PERCENTILES
        .iter()
        .filter_map(|&p| percentile_sorted(&sorted, p))
        .collect();
    SdmEntry {
        subgroup,
        label,
        count: scores.len(),
        histogram,
        percentiles,
    }
}

/// Per-subgroup, per-label histograms and percentiles.
pub fn sdm_summary(groups: &SubgroupScores) -> SdmSummary {
    let entries = groups
        .iter()
        .flat_map(|(&sg, s)| {
            [
                sdm_entry(sg, Label::Genuine, &s.genuine),
                sdm_entry(sg, Label::Imposter, &s.imposter),
            ]
        })
        .collect();
    SdmSummary { entries }
}

/// Signed relative difference `100 · (achieved − intended) / intended`.
pub fn percent_diff_from_intended(achieved_fpr: f64, intended_fpr: f64) -> Result<f64> {
    if intended_fpr.is_nan() || intended_fpr <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "intended FPR must be positive, got {intended_fpr}"
        )));
    }
    Ok(100.0 * (achieved_fpr - intended_fpr) / intended_fpr)
}
