//! Deterministic synthetic data: embeddings with per-subgroup cluster
//! geometry, and score-level draws from truncated normals.
//!
//! Every random draw comes from a ChaCha8 stream derived from
//! `(seed, subgroup, subject)` or `(seed, subgroup, label)`, so generation
//! can be parallel and still reproduce the same bytes on any platform.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::{FaceRecord, FaceTable};
use crate::metrics::{LabeledScores, SubgroupScores};
use crate::stats::{rng_for, Rng};
use crate::subgroup::Subgroup;

/// Embedding geometry for one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpec {
    pub subgroup: Subgroup,
    pub subjects: usize,
    pub faces_per_subject: usize,
    /// Per-face noise around the subject center. Larger lowers genuine scores.
    pub intra_class_spread: f64,
    /// Subject-center noise around the subgroup centroid. Smaller raises
    /// within-subgroup imposter scores.
    pub inter_class_spread: f64,
    /// Extra weight on the subject center, raising genuine scores.
    pub genuine_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subgroups: Vec<SubgroupSpec>,
    pub feature_dim: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be >= 2".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.subgroups {
            let sg = s.subgroup;
            if !seen.insert(sg) {
                return Err(Error::Config(format!("subgroup {sg} listed twice")));
            }
            if s.subjects < 2 {
                return Err(Error::Config(format!("{sg}: at least 2 subjects required")));
            }
            if s.faces_per_subject < 1 {
                return Err(Error::Config(format!("{sg}: at least 1 face per subject required")));
            }
            for (name, v) in [
                ("intra_class_spread", s.intra_class_spread),
                ("inter_class_spread", s.inter_class_spread),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{sg}: {name} must be positive, got {v}")));
                }
            }
            if !(s.genuine_shift.is_finite() && s.genuine_shift > -1.0) {
                return Err(Error::Config(format!("{sg}: genuine_shift must exceed -1")));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// `normalize(weight · base + spread · z / sqrt(dim))` for standard normal `z`.
fn perturb(base: &[f64], weight: f64, spread: f64, rng: &mut Rng) -> Vec<f64> {
    let scale = spread / (base.len() as f64).sqrt();
    let z = gaussian(rng, base.len());
    normalize(base.iter().zip(z).map(|(b, n)| weight * b + scale * n).collect())
}

pub fn subject_id(subgroup: Subgroup, subject: usize) -> String {
    format!("{subgroup}_{subject:04}")
}

pub fn face_id(subgroup: Subgroup, subject: usize, face: usize) -> String {
    format!("{subgroup}_{subject:04}_{face:03}")
}

/// Generates a face table: one random centroid per subgroup, subject
/// centers scattered around it, faces scattered around their subject.
/// All features are unit-norm.
pub fn generate_embeddings(cfg: &SynthConfig) -> Result<FaceTable> {
    cfg.validate()?;
    let dim = cfg.feature_dim;
    let jobs: Vec<(&SubgroupSpec, Vec<f64>, usize)> = cfg
        .subgroups
        .iter()
        .flat_map(|spec| {
            let centroid = normalize(gaussian(
                &mut rng_for(cfg.seed, &format!("synth/{}/centroid", spec.subgroup)),
                dim,
            ));
            (0..spec.subjects).map(move |s| (spec, centroid.clone(), s))
        })
        .collect();
    let per_subject: Vec<Vec<FaceRecord>> = jobs
        .par_iter()
        .map(|(spec, centroid, s)| {
            let sg = spec.subgroup;
            let mut rng = rng_for(cfg.seed, &format!("synth/{sg}/{s}"));
            let center = perturb(centroid, 1.0, spec.inter_class_spread, &mut rng);
            (0..spec.faces_per_subject)
                .map(|f| FaceRecord {
                    face_id: face_id(sg, *s, f),
                    subject_id: subject_id(sg, *s),
                    subgroup: sg,
                    feature: perturb(&center, 1.0 + spec.genuine_shift, spec.intra_class_spread, &mut rng),
                })
                .collect()
        })
        .collect();
    FaceTable::new(per_subject.into_iter().flatten().collect())
}

/// Location-scale parameters of a normal truncated to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDist {
    pub mean: f64,
    pub sd: f64,
}

impl ScoreDist {
    pub const fn new(mean: f64, sd: f64) -> Self {
        ScoreDist { mean, sd }
    }

    fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.mean) {
            return Err(Error::InvalidInput(format!("score mean {} outside [-1, 1]", self.mean)));
        }
        if !(self.sd.is_finite() && self.sd >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "score sd {} must be finite and >= 0",
                self.sd
            )));
        }
        Ok(())
    }

    /// Rejection sampling. The mean lies inside the support, so at least
    /// half of all draws are accepted.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.mean + self.sd * z;
            if (-1.0..=1.0).contains(&x) {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub subgroup: Subgroup,
    pub genuine: ScoreDist,
    pub imposter: ScoreDist,
    pub genuine_count: usize,
    pub imposter_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSynthConfig {
    pub subgroups: Vec<ScoreSpec>,
    pub seed: u64,
}

/// Draws i.i.d. genuine and imposter scores per subgroup.
pub fn generate_scores(cfg: &ScoreSynthConfig) -> Result<SubgroupScores> {
    for s in &cfg.subgroups {
        s.genuine.validate()?;
        s.imposter.validate()?;
        if s.genuine_count == 0 || s.imposter_count == 0 {
            return Err(Error::InvalidInput(format!("{}: counts must be >= 1", s.subgroup)));
        }
    }
    let draw = |sg: Subgroup, label: &str, d: ScoreDist, n: usize| {
        let mut rng = rng_for(cfg.seed, &format!("scores/{sg}/{label}"));
        (0..n).map(|_| d.sample(&mut rng)).collect::<Vec<f64>>()
    };
    let generated: Vec<(Subgroup, LabeledScores)> = cfg
        .subgroups
        .par_iter()
        .map(|s| {
            (
                s.subgroup,
                LabeledScores {
                    genuine: draw(s.subgroup, "genuine", s.genuine, s.genuine_count),
                    imposter: draw(s.subgroup, "imposter", s.imposter, s.imposter_count),
                },
            )
        })
        .collect();
    let mut out = SubgroupScores::new();
    for (sg, s) in generated {
        if out.insert(sg, s).is_some() {
            return Err(Error::InvalidInput(format!("subgroup {sg} listed twice")));
        }
    }
    Ok(out)
}

/// Deals i.i.d. scores round-robin into folds `1..=k`.
pub fn split_folds(scores: &SubgroupScores, k: u32) -> Result<BTreeMap<u32, SubgroupScores>> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    let mut out: BTreeMap<u32, SubgroupScores> = (1..=k).map(|f| (f, SubgroupScores::new())).collect();
    for (&sg, s) in scores {
        for (i, &x) in s.genuine.iter().enumerate() {
            out.get_mut(&(i as u32 % k + 1))
                .unwrap()
                .entry(sg)
                .or_default()
                .genuine
                .push(x);
        }
        for (i, &x) in s.imposter.iter().enumerate() {
            out.get_mut(&(i as u32 % k + 1))
                .unwrap()
                .entry(sg)
                .or_default()
                .imposter
                .push(x);
        }
    }
    Ok(out)
}

/// Ready-made configurations.
pub mod presets {
    use super::*;

    /// Named presets accepted by the CLI.
    pub const NAMES: [&str; 4] = ["skew", "skew-small", "overlap", "uniform"];

    fn spec(subgroup: Subgroup, subjects: usize, faces: usize, intra: f64, inter: f64, shift: f64) -> SubgroupSpec {
        SubgroupSpec {
            subgroup,
            subjects,
            faces_per_subject: faces,
            intra_class_spread: intra,
            inter_class_spread: inter,
            genuine_shift: shift,
        }
    }

    /// (intra, inter, genuine shift) per subgroup, in [`Subgroup::ALL`] order.
    /// Females and the A/B/I groups have noisier genuine pairs; W and the male
    /// groups have tighter subject clusters and so higher imposter scores.
    const SKEW_GEOMETRY: [(f64, f64, f64); 8] = [
        (1.00, 1.15, 0.00), // AF
        (0.85, 1.05, 0.05), // AM
        (0.95, 1.15, 0.00), // BF
        (0.85, 1.00, 0.05), // BM
        (0.95, 1.30, 0.00), // IF
        (0.85, 1.10, 0.05), // IM
        (0.80, 0.98, 0.10), // WF
        (0.75, 0.90, 0.15), // WM
    ];

    fn skew_with(subjects: usize, faces: usize, feature_dim: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            subgroups: Subgroup::ALL
                .iter()
                .zip(SKEW_GEOMETRY)
                .map(|(&sg, (intra, inter, shift))| spec(sg, subjects, faces, intra, inter, shift))
                .collect(),
            feature_dim,
            seed,
        }
    }

    /// 8 subgroups × 100 subjects × 30 faces, 64-D, with subgroup-dependent
    /// genuine and imposter distributions.
    pub fn skew(seed: u64) -> SynthConfig {
        skew_with(100, 30, 64, seed)
    }

    /// Same geometry as [`skew`], small enough for quick runs.
    pub fn skew_small(seed: u64) -> SynthConfig {
        skew_with(12, 8, 32, seed)
    }

    /// Subjects overlap heavily inside each subgroup while subgroups are far
    /// apart, so rank-1 errors stay within subgroups.
    pub fn overlap(seed: u64) -> SynthConfig {
        SynthConfig {
            subgroups: Subgroup::ALL
                .iter()
                .map(|&sg| spec(sg, 20, 6, 0.9, 0.35, 0.0))
                .collect(),
            feature_dim: 128,
            seed,
        }
    }

    /// Identical geometry for all subgroups.
    pub fn uniform(seed: u64) -> SynthConfig {
        SynthConfig {
            subgroups: Subgroup::ALL
                .iter()
                .map(|&sg| spec(sg, 20, 10, 0.8, 1.0, 0.0))
                .collect(),
            feature_dim: 64,
            seed,
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Option<SynthConfig> {
        match name {
            "skew" => Some(skew(seed)),
            "skew-small" => Some(skew_small(seed)),
            "overlap" => Some(overlap(seed)),
            "uniform" => Some(uniform(seed)),
            _ => None,
        }
    }

    /// ((imposter mean, sd), (genuine mean, sd)) per subgroup. A pooled
    /// threshold at FPR 0.01 accepts roughly 3× the intended rate for WM and
    /// almost nothing for IF.
    pub const SKEW_SCORES: [((f64, f64), (f64, f64)); 8] = [
        ((0.27, 0.10), (0.58, 0.14)), // AF
        ((0.31, 0.10), (0.66, 0.12)), // AM
        ((0.27, 0.10), (0.60, 0.13)), // BF
        ((0.32, 0.10), (0.67, 0.12)), // BM
        ((0.24, 0.09), (0.60, 0.13)), // IF
        ((0.29, 0.10), (0.65, 0.12)), // IM
        ((0.33, 0.10), (0.68, 0.11)), // WF
        ((0.36, 0.10), (0.72, 0.10)), // WM
    ];

    /// Score-level skew preset: 30,000 genuine and 200,000 imposter scores
    /// per subgroup.
    pub fn skew_scores(seed: u64) -> ScoreSynthConfig {
        skew_scores_with(30_000, 200_000, seed)
    }

    pub fn skew_scores_with(genuine_count: usize, imposter_count: usize, seed: u64) -> ScoreSynthConfig {
        ScoreSynthConfig {
            subgroups: Subgroup::ALL
                .iter()
                .zip(SKEW_SCORES)
                .map(|(&sg, ((im, is), (gm, gs)))| ScoreSpec {
                    subgroup: sg,
                    genuine: ScoreDist::new(gm, gs),
                    imposter: ScoreDist::new(im, is),
                    genuine_count,
                    imposter_count,
                })
                .collect(),
            seed,
        }
    }
}
