//! Global and per-subgroup threshold calibration, and cross-fold
//! evaluation of both policies side by side.
//!
//! A threshold is calibrated as the exact empirical quantile of imposter
//! scores: the smallest observed score `t` such that the fraction of
//! imposters scoring `>= t` does not exceed the intended FPR. When even the
//! largest score admits too many imposters (ties at the top, or an intended
//! FPR finer than `1 / n`), the threshold is moved just above the maximum so
//! that nothing is accepted, and a warning is attached.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{percent_diff_from_intended, pool, SortedScores, SubgroupScores};
use crate::stats::mean;
use crate::subgroup::Subgroup;

/// How a pair's decision threshold is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Global(f64),
    /// Resolved by the subgroup of the query (first) face.
    PerSubgroup(BTreeMap<Subgroup, f64>),
}

impl ThresholdPolicy {
    pub fn threshold_for(&self, query: Subgroup) -> Result<f64> {
        match self {
            ThresholdPolicy::Global(t) => Ok(*t),
            ThresholdPolicy::PerSubgroup(m) => m.get(&query).copied().ok_or(Error::MissingSubgroup(query)),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            ThresholdPolicy::Global(_) => PolicyKind::Global,
            ThresholdPolicy::PerSubgroup(_) => PolicyKind::PerSubgroup,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Global,
    PerSubgroup,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Global => "global",
            PolicyKind::PerSubgroup => "per-subgroup",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which policies a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    Global,
    PerSubgroup,
    #[default]
    Both,
}

impl PolicyMode {
    pub fn kinds(self) -> &'static [PolicyKind] {
        match self {
            PolicyMode::Global => &[PolicyKind::Global],
            PolicyMode::PerSubgroup => &[PolicyKind::PerSubgroup],
            PolicyMode::Both => &[PolicyKind::Global, PolicyKind::PerSubgroup],
        }
    }
}

/// One calibrated threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub threshold: f64,
    pub achieved_fpr: f64,
    pub imposters: usize,
    /// Set when the intended FPR is below what `imposters` can resolve.
    pub warning: Option<String>,
}

fn check_intended(intended_fpr: f64) -> Result<()> {
    if !(intended_fpr > 0.0 && intended_fpr <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "intended FPR must lie in (0, 1], got {intended_fpr}"
        )));
    }
    Ok(())
}

/// Sorted imposter scores, ready for repeated quantile queries.
#[derive(Debug, Clone)]
pub struct ImposterQuantiles {
    sorted: Vec<f64>,
}

impl ImposterQuantiles {
    pub fn new(imposters: &[f64]) -> Result<Self> {
        if imposters.is_empty() {
            return Err(Error::NoImposters(None));
        }
        if imposters.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("NaN imposter score".into()));
        }
        let mut sorted = imposters.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(ImposterQuantiles { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of imposters scoring `>= threshold`.
    pub fn fpr_at(&self, threshold: f64) -> f64 {
        let n = self.sorted.len();
        (n - self.sorted.partition_point(|&s| s < threshold)) as f64 / n as f64
    }

    /// Smallest observed score whose FPR is at most `intended_fpr`.
    pub fn calibrate(&self, intended_fpr: f64) -> Result<CalibratedThreshold> {
        check_intended(intended_fpr)?;
        let sorted = &self.sorted;
        let n = sorted.len();
        let fpr_from = |i: usize| (n - i) as f64 / n as f64;

        // Largest admissible imposter count, then the matching start index,
        // moved forward past any run of equal scores so that `>= sorted[i]`
        // admits exactly the suffix.
        let mut allowed = ((intended_fpr * n as f64).floor() as usize).min(n);
        while allowed < n && fpr_from(n - allowed - 1) <= intended_fpr {
            allowed += 1;
        }
        while allowed > 0 && fpr_from(n - allowed) > intended_fpr {
            allowed -= 1;
        }
        let mut i = n - allowed;
        while i > 0 && i < n && sorted[i - 1] == sorted[i] {
            i += 1;
        }
        let mut warning = None;
        if (intended_fpr * n as f64) < 1.0 {
            warning = Some(format!(
                "intended FPR {intended_fpr} is below the resolution 1/{n} of the imposter set"
            ));
        }
        let (threshold, achieved_fpr) = if i < n {
            (sorted[i], fpr_from(i))
        } else {
            warning.get_or_insert_with(|| {
                format!("no observed threshold reaches FPR {intended_fpr}; rejecting everything")
            });
            (sorted[n - 1].next_up(), 0.0)
        };
        Ok(CalibratedThreshold {
            threshold,
            achieved_fpr,
            imposters: n,
            warning,
        })
    }
}

/// Smallest observed imposter score whose FPR is at most `intended_fpr`.
pub fn calibrate_threshold(imposters: &[f64], intended_fpr: f64) -> Result<CalibratedThreshold> {
    check_intended(intended_fpr)?;
    ImposterQuantiles::new(imposters)?.calibrate(intended_fpr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub policy: ThresholdPolicy,
    pub intended_fpr: f64,
    /// Achieved FPR on the calibration data, per subgroup.
    pub achieved_fpr: BTreeMap<Subgroup, f64>,
    /// Pooled achieved FPR (the constrained quantity for a global policy).
    pub pooled_fpr: f64,
    pub calibration_folds: Vec<u32>,
    pub warnings: Vec<String>,
}

fn achieved_by_subgroup(groups: &SubgroupScores, policy: &ThresholdPolicy) -> Result<(BTreeMap<Subgroup, f64>, f64)> {
    let mut per = BTreeMap::new();
    let (mut fp, mut n) = (0usize, 0usize);
    for (&sg, s) in groups {
        if s.imposter.is_empty() {
            continue;
        }
        let t = policy.threshold_for(sg)?;
        let k = s.imposter.iter().filter(|&&x| x >= t).count();
        per.insert(sg, k as f64 / s.imposter.len() as f64);
        fp += k;
        n += s.imposter.len();
    }
    Ok((per, fp as f64 / n as f64))
}

/// One threshold from the imposters of all subgroups pooled.
pub fn calibrate_global(groups: &SubgroupScores, intended_fpr: f64) -> Result<CalibrationResult> {
    let pooled = pool(groups);
    let c = calibrate_threshold(&pooled.imposter, intended_fpr)?;
    let policy = ThresholdPolicy::Global(c.threshold);
    let (achieved_fpr, pooled_fpr) = achieved_by_subgroup(groups, &policy)?;
    Ok(CalibrationResult {
        policy,
        intended_fpr,
        achieved_fpr,
        pooled_fpr,
        calibration_folds: Vec::new(),
        warnings: c.warning.into_iter().collect(),
    })
}

/// An independent threshold per subgroup.
pub fn calibrate_per_subgroup(groups: &SubgroupScores, intended_fpr: f64) -> Result<CalibrationResult> {
    let mut map = BTreeMap::new();
    let mut warnings = Vec::new();
    for (&sg, s) in groups {
        let c = calibrate_threshold(&s.imposter, intended_fpr).map_err(|e| match e {
            Error::NoImposters(None) => Error::NoImposters(Some(sg)),
            e => e,
        })?;
        if let Some(w) = c.warning {
            warnings.push(format!("{sg}: {w}"));
        }
        map.insert(sg, c.threshold);
    }
    let policy = ThresholdPolicy::PerSubgroup(map);
    let (achieved_fpr, pooled_fpr) = achieved_by_subgroup(groups, &policy)?;
    Ok(CalibrationResult {
        policy,
        intended_fpr,
        achieved_fpr,
        pooled_fpr,
        calibration_folds: Vec::new(),
        warnings,
    })
}

pub fn calibrate(kind: PolicyKind, groups: &SubgroupScores, intended_fpr: f64) -> Result<CalibrationResult> {
    match kind {
        PolicyKind::Global => calibrate_global(groups, intended_fpr),
        PolicyKind::PerSubgroup => calibrate_per_subgroup(groups, intended_fpr),
    }
}

/// Where thresholds are learned relative to the fold they are tested on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Calibrate on the other K−1 folds.
    #[default]
    CrossFold,
    /// Calibrate and test on the same fold.
    Resubstitution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub intended_fprs: Vec<f64>,
    pub mode: PolicyMode,
    pub protocol: Protocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            intended_fprs: vec![0.3, 0.1, 0.01, 0.001, 0.0001],
            mode: PolicyMode::Both,
            protocol: Protocol::CrossFold,
        }
    }
}

/// Label used for the across-subgroup average row.
pub const AVG_SLICE: &str = "Avg";

/// One cell group of the report: a policy applied to one slice at one
/// intended FPR, either for a single fold or averaged over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// `None` for fold-averaged rows.
    pub fold: Option<u32>,
    pub policy: PolicyKind,
    /// Subgroup code, or [`AVG_SLICE`].
    pub slice: String,
    pub intended_fpr: f64,
    pub threshold: f64,
    pub tar: f64,
    pub fnr: f64,
    pub achieved_fpr: f64,
    pub percent_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub intended_fprs: Vec<f64>,
    pub folds: Vec<u32>,
    /// Evaluation fold → folds its thresholds were calibrated on.
    pub calibration_folds: BTreeMap<u32, Vec<u32>>,
    /// Fold-averaged rows, grouped by slice, then policy, then intended FPR;
    /// the [`AVG_SLICE`] rows come last.
    pub rows: Vec<EvalRow>,
    pub per_fold: Vec<EvalRow>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn row(&self, policy: PolicyKind, slice: &str, intended_fpr: f64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.slice == slice && r.intended_fpr == intended_fpr)
    }
}

fn eval_row(
    fold: u32,
    policy: PolicyKind,
    slice: String,
    intended: f64,
    threshold: f64,
    test: &SortedScores,
) -> Result<EvalRow> {
    let c = test.confusion_at(threshold);
    let achieved_fpr = c.fpr();
    Ok(EvalRow {
        fold: Some(fold),
        policy,
        slice,
        intended_fpr: intended,
        threshold,
        tar: c.tar(),
        fnr: c.fnr(),
        achieved_fpr,
        percent_diff: percent_diff_from_intended(achieved_fpr, intended)?,
    })
}

fn eval_fold(
    fold: u32,
    calib: &SubgroupScores,
    test: &SubgroupScores,
    cfg: &EvalConfig,
) -> Result<(Vec<EvalRow>, Vec<String>)> {
    let test: Vec<(Subgroup, SortedScores)> = test
        .iter()
        .filter(|(_, s)| !s.imposter.is_empty())
        .map(|(&sg, s)| (sg, s.sorted()))
        .collect();
    if test.is_empty() {
        return Err(Error::NoImposters(None));
    }
    let wants = |k| cfg.mode.kinds().contains(&k);
    let pooled = if wants(PolicyKind::Global) {
        Some(ImposterQuantiles::new(&pool(calib).imposter)?)
    } else {
        None
    };
    let mut per_subgroup = BTreeMap::new();
    if wants(PolicyKind::PerSubgroup) {
        for (sg, _) in &test {
            let s = calib
                .get(sg)
                .filter(|s| !s.imposter.is_empty())
                .ok_or(Error::NoImposters(Some(*sg)))?;
            per_subgroup.insert(*sg, ImposterQuantiles::new(&s.imposter)?);
        }
    }

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut warn = |kind: PolicyKind, intended: f64, w: Option<String>| {
        if let Some(w) = w {
            warnings.push(format!("fold {fold}, {kind}, FPR {intended}: {w}"));
        }
    };
    for &kind in cfg.mode.kinds() {
        for &intended in &cfg.intended_fprs {
            let mut slice_rows = Vec::with_capacity(test.len() + 1);
            let global = match &pooled {
                Some(q) if kind == PolicyKind::Global => {
                    let c = q.calibrate(intended)?;
                    warn(kind, intended, c.warning);
                    Some(c.threshold)
                }
                _ => None,
            };
            for (sg, sorted) in &test {
                let t = match global {
                    Some(t) => t,
                    None => {
                        let c = per_subgroup[sg].calibrate(intended)?;
                        warn(kind, intended, c.warning.map(|w| format!("{sg}: {w}")));
                        c.threshold
                    }
                };
                slice_rows.push(eval_row(fold, kind, sg.code(), intended, t, sorted)?);
            }
            let avg = average_rows(&slice_rows, Some(fold), AVG_SLICE.to_string());
            rows.extend(slice_rows);
            rows.push(avg);
        }
    }
    Ok((rows, warnings))
}

/// Field-wise mean; `fold`, `policy` and `intended_fpr` come from the first row.
fn average_rows(rows: &[EvalRow], fold: Option<u32>, slice: String) -> EvalRow {
    let m = |f: fn(&EvalRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    EvalRow {
        fold,
        policy: rows[0].policy,
        slice,
        intended_fpr: rows[0].intended_fpr,
        threshold: m(|r| r.threshold),
        tar: m(|r| r.tar),
        fnr: m(|r| r.fnr),
        achieved_fpr: m(|r| r.achieved_fpr),
        percent_diff: m(|r| r.percent_diff),
    }
}

/// Calibrates each policy per fold under `cfg.protocol`, evaluates on the
/// held-out fold, and averages every slice over folds.
pub fn evaluate_policy(folds: &BTreeMap<u32, SubgroupScores>, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.intended_fprs.is_empty() {
        return Err(Error::Config("no intended FPR given".into()));
    }
    for &t in &cfg.intended_fprs {
        check_intended(t)?;
    }
    let ids: Vec<u32> = folds.keys().copied().collect();
    if cfg.protocol == Protocol::CrossFold && ids.len() < 2 {
        return Err(Error::Config(format!(
            "cross-fold calibration needs at least 2 folds, got {}",
            ids.len()
        )));
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let calibration_folds: BTreeMap<u32, Vec<u32>> = ids
        .iter()
        .map(|&f| {
            let cal = match cfg.protocol {
                Protocol::CrossFold => ids.iter().copied().filter(|&g| g != f).collect(),
                Protocol::Resubstitution => vec![f],
            };
            (f, cal)
        })
        .collect();

    let results: Vec<Result<(Vec<EvalRow>, Vec<String>)>> = ids
        .par_iter()
        .map(|&f| {
            let mut calib = SubgroupScores::new();
            for g in &calibration_folds[&f] {
                for (&sg, s) in &folds[g] {
                    calib.entry(sg).or_default().extend(s);
                }
            }
            eval_fold(f, &calib, &folds[&f], cfg).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect();

    let mut per_fold = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        let (rows, w) = r?;
        per_fold.extend(rows);
        warnings.extend(w);
    }

    let mut slices: Vec<String> = folds
        .values()
        .flat_map(|g| g.iter().filter(|(_, s)| !s.imposter.is_empty()).map(|(sg, _)| *sg))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|sg| sg.code())
        .collect();
    slices.push(AVG_SLICE.to_string());

    let mut rows = Vec::new();
    for slice in &slices {
        for &kind in cfg.mode.kinds() {
            for &intended in &cfg.intended_fprs {
                let matching: Vec<EvalRow> = per_fold
                    .iter()
                    .filter(|r| r.policy == kind && &r.slice == slice && r.intended_fpr == intended)
                    .cloned()
                    .collect();
                if !matching.is_empty() {
                    rows.push(average_rows(&matching, None, slice.clone()));
                }
            }
        }
    }

    Ok(EvalReport {
        protocol: cfg.protocol,
        intended_fprs: cfg.intended_fprs.clone(),
        folds: ids,
        calibration_folds,
        rows,
        per_fold,
        warnings,
    })
}
