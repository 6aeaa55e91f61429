//! Brute-force reference implementations checked against the library on
//! random instances.

use facebias::calibration::calibrate_threshold;
use facebias::metrics::{det_curve, rank1_confusion, sdm_bin, tar_at_far, LabeledScores};
use facebias::{Ethnicity, FaceRecord, FaceTable, Gender, Subgroup};
use proptest::prelude::*;

fn brute_counts(s: &LabeledScores, t: f64) -> (u64, u64, u64, u64) {
    let tp = s.genuine.iter().filter(|&&x| x >= t).count() as u64;
    let fp = s.imposter.iter().filter(|&&x| x >= t).count() as u64;
    (tp, fp, s.imposter.len() as u64 - fp, s.genuine.len() as u64 - tp)
}

fn brute_grid(s: &LabeledScores) -> Vec<f64> {
    let mut g: Vec<f64> = s.genuine.iter().chain(&s.imposter).copied().collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g.insert(0, f64::NEG_INFINITY);
    g.push(f64::INFINITY);
    g
}

fn brute_tar_at_far(s: &LabeledScores, target: f64) -> (f64, u64) {
    for t in brute_grid(s) {
        let (tp, fp, _, _) = brute_counts(s, t);
        if fp as f64 / s.imposter.len() as f64 <= target {
            return (t, tp);
        }
    }
    unreachable!("+inf always has zero false positives")
}

/// Scores on a coarse lattice so that ties are common.
fn lattice_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..=20).prop_map(|k| k as f64 / 20.0), 1..max)
}

fn labeled() -> impl Strategy<Value = LabeledScores> {
    (lattice_scores(60), lattice_scores(200)).prop_map(|(genuine, imposter)| LabeledScores { genuine, imposter })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn det_matches_brute_force(s in labeled()) {
        let det = det_curve(&s, None).unwrap();
        let grid = brute_grid(&s);
        prop_assert_eq!(det.points.len(), grid.len());
        for (p, &t) in det.points.iter().zip(&grid) {
            prop_assert_eq!(p.threshold, t);
            let (tp, fp, tn, fn_) = brute_counts(&s, t);
            prop_assert_eq!((p.counts.tp, p.counts.fp, p.counts.tn, p.counts.fn_), (tp, fp, tn, fn_));
        }
    }

    #[test]
    fn det_on_explicit_grid_matches_brute_force(
        s in labeled(),
        grid in prop::collection::vec(-1.2f64..1.2, 1..30),
    ) {
        let det = det_curve(&s, Some(&grid)).unwrap();
        let mut g = grid.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        prop_assert_eq!(det.points.len(), g.len());
        for (p, &t) in det.points.iter().zip(&g) {
            let (tp, fp, tn, fn_) = brute_counts(&s, t);
            prop_assert_eq!((p.counts.tp, p.counts.fp, p.counts.tn, p.counts.fn_), (tp, fp, tn, fn_));
        }
    }

    #[test]
    fn tar_at_far_matches_brute_force(
        s in labeled(),
        targets in prop::collection::vec(0.0f64..=1.0, 1..6),
    ) {
        let got = tar_at_far(&s, &targets).unwrap();
        for (r, &target) in got.iter().zip(&targets) {
            let (t, tp) = brute_tar_at_far(&s, target);
            prop_assert_eq!(r.threshold, t);
            prop_assert_eq!(r.tar, tp as f64 / s.genuine.len() as f64);
            prop_assert!(r.achieved_far <= target);
        }
    }

    #[test]
    fn calibration_is_minimal(imposters in lattice_scores(300), target in 0.001f64..=1.0) {
        let c = calibrate_threshold(&imposters, target).unwrap();
        let n = imposters.len() as f64;
        let fpr = |t: f64| imposters.iter().filter(|&&x| x >= t).count() as f64 / n;
        let feasible: Vec<f64> = imposters.iter().copied().filter(|&t| fpr(t) <= target).collect();
        match feasible.iter().copied().reduce(f64::min) {
            Some(best) => prop_assert_eq!(c.threshold, best),
            None => {
                let max = imposters.iter().copied().reduce(f64::max).unwrap();
                prop_assert_eq!(c.threshold, max.next_up());
            }
        }
        prop_assert_eq!(c.achieved_fpr, fpr(c.threshold));
        prop_assert!(c.achieved_fpr <= target);
    }

    #[test]
    fn sdm_bin_matches_interval_search(s in -1.0f64..=1.0) {
        let b = sdm_bin(s);
        let lo = |i: usize| -1.0 + 0.02 * i as f64;
        // The computed bin's interval contains s up to one ulp of rounding.
        prop_assert!(lo(b) <= s + 1e-12 && (s < lo(b + 1) + 1e-12 || b == 99));
    }
}

fn brute_rank1(faces: &[FaceRecord]) -> (Vec<u64>, Vec<Vec<u64>>) {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut probes = vec![0u64; 8];
    let mut errors = vec![vec![0u64; 8]; 8];
    for (i, p) in faces.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_s = f64::NEG_INFINITY;
        for (j, q) in faces.iter().enumerate() {
            if i == j {
                continue;
            }
            let s = cos(&p.feature, &q.feature);
            if best == usize::MAX || s > best_s {
                best = j;
                best_s = s;
            }
        }
        probes[p.subgroup.index()] += 1;
        if faces[best].subject_id != p.subject_id {
            errors[p.subgroup.index()][faces[best].subgroup.index()] += 1;
        }
    }
    (probes, errors)
}

fn face_set() -> impl Strategy<Value = Vec<FaceRecord>> {
    let face = (0usize..8, 0usize..4, prop::collection::vec(-1.0f64..1.0, 4));
    (
        prop::collection::vec(face, 2..60),
        prop::collection::vec(any::<prop::sample::Index>(), 0..4),
    )
        .prop_map(|(raw, dups)| {
            let mut faces: Vec<FaceRecord> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (sg, subj, mut feature))| {
                    if feature.iter().all(|&x| x == 0.0) {
                        feature[0] = 1.0;
                    }
                    let subgroup = Subgroup::from_index(sg).unwrap();
                    FaceRecord {
                        face_id: format!("f{i:03}"),
                        subject_id: format!("{}_{subj}", subgroup.code()),
                        subgroup,
                        feature,
                    }
                })
                .collect();
            // Exact duplicates exercise the lowest-index tie rule.
            for d in dups {
                let mut copy = faces[d.index(faces.len())].clone();
                copy.face_id = format!("dup{}", faces.len());
                faces.push(copy);
            }
            faces
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rank1_matches_brute_force(faces in face_set()) {
        let table = FaceTable::new(faces.clone()).unwrap();
        let got = rank1_confusion(&table).unwrap();
        let (probes, errors) = brute_rank1(&faces);
        prop_assert_eq!(got.probes, probes);
        prop_assert_eq!(got.errors, errors);
    }
}

#[test]
fn rank1_tie_goes_to_lowest_index() {
    let sg = Subgroup::new(Ethnicity::Black, Gender::Male);
    let face = |id: &str, subject: &str, feature: Vec<f64>| FaceRecord {
        face_id: id.into(),
        subject_id: subject.into(),
        subgroup: sg,
        feature,
    };
    // Probe a is equidistant from b (other subject) and c (same subject) and
    // must pick b. Probes b and c are each other's nearest and are errors too.
    let faces = vec![
        face("a", "s0", vec![1.0, 0.0]),
        face("b", "s1", vec![0.0, 1.0]),
        face("c", "s0", vec![0.0, 1.0]),
    ];
    let got = rank1_confusion(&FaceTable::new(faces).unwrap()).unwrap();
    assert_eq!(got.errors[sg.index()][sg.index()], 3);
}
