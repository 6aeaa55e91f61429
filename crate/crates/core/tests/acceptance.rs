//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use facebias::calibration::{calibrate_threshold, evaluate_policy, EvalConfig, EvalReport, AVG_SLICE};
use facebias::curation::{calibration_overlap, check_fold_hygiene, curate, pair_counts, CurationConfig};
use facebias::metrics::{det_curve, rank1_confusion, tar_at_far, LabeledScores};
use facebias::pipeline::{self, run_pipeline};
use facebias::stats::{rng_for, Rng};
use facebias::synth::{generate_embeddings, generate_scores, presets, split_folds};
use facebias::{FaceRecord, FaceTable, PairKind, PairRecord, PolicyKind, Subgroup};
use rand::Rng as _;

const POSITIVES_PER_SUBGROUP: usize = 30_000;
const POSITIVES_TOTAL: usize = 240_000;
const MAX_CURATION_SECS: f64 = 10.0;

const CALIBRATION_SETS: usize = 1_000;
const MIN_IMPOSTERS: usize = 10;
const MAX_IMPOSTERS: usize = 100_000;

const SKEW_FPR: f64 = 0.01;
const MIN_IMPOSTERS_PER_SUBGROUP: usize = 50_000;
const OVER_FACTOR: f64 = 2.0;
const UNDER_FACTOR: f64 = 0.5;
const MAX_ABS_PERCENT_DIFF: f64 = 10.0;
const MAX_SKEW_SECS: f64 = 60.0;

const TAR_FPRS: [f64; 3] = [0.3, 0.1, 0.01];
const TAR_SLACK: f64 = 0.005;

const ORACLE_INSTANCES: usize = 200;
const MAX_ORACLE_PAIRS: usize = 10_000;

const MIN_DIAGONAL_SHARE: f64 = 0.95;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn count_reproduction() -> Outcome {
    let faces = generate_embeddings(&presets::skew(101)).expect("corpus");
    let cfg = CurationConfig {
        seed: 101,
        ..CurationConfig::default()
    };
    let start = Instant::now();
    let c = match curate(&faces, &cfg) {
        Ok(c) => c,
        Err(e) => return check(false, format!("curation failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let counts = pair_counts(&c.pairs, &faces).expect("counts");
    let per: Vec<usize> = Subgroup::ALL
        .iter()
        .map(|sg| counts.get(sg).map_or(0, |c| c.positive))
        .collect();
    let total: usize = per.iter().sum();
    let pass = per.iter().all(|&p| p == POSITIVES_PER_SUBGROUP) && total == POSITIVES_TOTAL && secs < MAX_CURATION_SECS;
    check(
        pass,
        format!(
            "positives per subgroup {per:?}, total {total} (want {POSITIVES_PER_SUBGROUP} / {POSITIVES_TOTAL}); curation {secs:.2} s (< {MAX_CURATION_SECS} s)"
        ),
    )
}

fn random_scores(rng: &mut Rng, n: usize) -> Vec<f64> {
    match rng.random_range(0..3) {
        // Continuous scores.
        0 => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        // Coarse lattice: heavy ties.
        1 => {
            let levels = rng.random_range(1..50);
            (0..n)
                .map(|_| rng.random_range(0..=levels) as f64 / levels as f64)
                .collect()
        }
        // A dominant tied value at the top.
        _ => (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0.9
                } else {
                    rng.random_range(-1.0..0.9)
                }
            })
            .collect(),
    }
}

fn calibration_exactness() -> Outcome {
    let mut rng = rng_for(202, "acceptance/calibration");
    let mut violations = 0;
    let mut total_scores = 0usize;
    for _ in 0..CALIBRATION_SETS {
        let log_n = rng.random_range((MIN_IMPOSTERS as f64).ln()..=(MAX_IMPOSTERS as f64).ln());
        let n = (log_n.exp().round() as usize).clamp(MIN_IMPOSTERS, MAX_IMPOSTERS);
        let scores = random_scores(&mut rng, n);
        total_scores += n;
        let target = rng.random_range(1e-5f64.ln()..=0.0).exp();
        let c = match calibrate_threshold(&scores, target) {
            Ok(c) => c,
            Err(_) => {
                violations += 1;
                continue;
            }
        };
        // Brute-force scan of every observed score.
        let fpr = |t: f64| scores.iter().filter(|&&x| x >= t).count() as f64 / n as f64;
        let achieved = fpr(c.threshold);
        let below = scores
            .iter()
            .copied()
            .filter(|&s| s < c.threshold)
            .fold(f64::NEG_INFINITY, f64::max);
        let minimal = below == f64::NEG_INFINITY || fpr(below) > target;
        let on_observed = scores.contains(&c.threshold)
            || c.threshold == scores.iter().copied().fold(f64::NEG_INFINITY, f64::max).next_up();
        if !(achieved <= target && minimal && on_observed && achieved == c.achieved_fpr) {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("{CALIBRATION_SETS} score sets ({total_scores} imposters), {violations} violations"),
    )
}

fn skew_report(fprs: &[f64]) -> (EvalReport, usize, f64) {
    let start = Instant::now();
    let scores = generate_scores(&presets::skew_scores(303)).expect("scores");
    let min_imposters = scores.values().map(|s| s.imposter.len()).min().unwrap_or(0);
    let folds = split_folds(&scores, 5).expect("folds");
    let cfg = EvalConfig {
        intended_fprs: fprs.to_vec(),
        ..EvalConfig::default()
    };
    let report = evaluate_policy(&folds, &cfg).expect("evaluation");
    (report, min_imposters, start.elapsed().as_secs_f64())
}

fn skew_reproduction() -> Outcome {
    let (report, min_imposters, secs) = skew_report(&[SKEW_FPR]);
    let achieved = |kind: PolicyKind| -> Vec<(String, f64, f64)> {
        report
            .rows
            .iter()
            .filter(|r| r.policy == kind && r.slice != AVG_SLICE)
            .map(|r| (r.slice.clone(), r.achieved_fpr, r.percent_diff))
            .collect()
    };
    let global = achieved(PolicyKind::Global);
    let per = achieved(PolicyKind::PerSubgroup);
    let (hi_sg, hi) = global
        .iter()
        .map(|(s, a, _)| (s.clone(), *a))
        .fold((String::new(), 0.0), |m, x| if x.1 > m.1 { x } else { m });
    let (lo_sg, lo) = global
        .iter()
        .map(|(s, a, _)| (s.clone(), *a))
        .fold((String::new(), 1.0), |m, x| if x.1 < m.1 { x } else { m });
    let worst = per.iter().map(|(_, _, d)| d.abs()).fold(0.0, f64::max);
    let pass = global.len() == 8
        && per.len() == 8
        && min_imposters >= MIN_IMPOSTERS_PER_SUBGROUP
        && hi >= OVER_FACTOR * SKEW_FPR
        && lo <= UNDER_FACTOR * SKEW_FPR
        && worst < MAX_ABS_PERCENT_DIFF
        && secs < MAX_SKEW_SECS;
    check(
        pass,
        format!(
            "global @ {SKEW_FPR}: {hi_sg} {:.2}x, {lo_sg} {:.2}x intended; per-subgroup max |diff| {worst:.2}% (< {MAX_ABS_PERCENT_DIFF}%); {min_imposters} imposters/subgroup; {secs:.1} s (< {MAX_SKEW_SECS} s)",
            hi / SKEW_FPR,
            lo / SKEW_FPR
        ),
    )
}

fn tar_direction() -> Outcome {
    let (report, _, _) = skew_report(&TAR_FPRS);
    let mut parts = Vec::new();
    let mut pass = true;
    for t in TAR_FPRS {
        let g = report.row(PolicyKind::Global, AVG_SLICE, t).map(|r| r.tar);
        let p = report.row(PolicyKind::PerSubgroup, AVG_SLICE, t).map(|r| r.tar);
        match (g, p) {
            (Some(g), Some(p)) => {
                pass &= p >= g - TAR_SLACK;
                parts.push(format!("@{t}: per-subgroup {p:.4} vs global {g:.4}"));
            }
            _ => {
                pass = false;
                parts.push(format!("@{t}: missing row"));
            }
        }
    }
    check(pass, format!("mean TAR {} (slack {TAR_SLACK})", parts.join(", ")))
}

fn brute_det_counts(s: &LabeledScores) -> Vec<(f64, u64, u64, u64, u64)> {
    let mut grid: Vec<f64> = s.genuine.iter().chain(&s.imposter).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.insert(0, f64::NEG_INFINITY);
    grid.push(f64::INFINITY);
    grid.into_iter()
        .map(|t| {
            let tp = s.genuine.iter().filter(|&&x| x >= t).count() as u64;
            let fp = s.imposter.iter().filter(|&&x| x >= t).count() as u64;
            (t, tp, fp, s.imposter.len() as u64 - fp, s.genuine.len() as u64 - tp)
        })
        .collect()
}

fn brute_rank1(faces: &[FaceRecord]) -> (Vec<u64>, Vec<Vec<u64>>) {
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut probes = vec![0u64; Subgroup::COUNT];
    let mut errors = vec![vec![0u64; Subgroup::COUNT]; Subgroup::COUNT];
    for (i, p) in faces.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, q) in faces.iter().enumerate() {
            if i != j {
                let dot: f64 = p.feature.iter().zip(&q.feature).map(|(a, b)| a * b).sum();
                let s = dot / (norm(&p.feature) * norm(&q.feature));
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
        }
        let j = best.expect("two faces").0;
        probes[p.subgroup.index()] += 1;
        if faces[j].subject_id != p.subject_id {
            errors[p.subgroup.index()][faces[j].subgroup.index()] += 1;
        }
    }
    (probes, errors)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = rng_for(505, "acceptance/oracle");
    let mut mismatches = Vec::new();
    let mut largest = 0;
    for inst in 0..ORACLE_INSTANCES {
        let n = rng.random_range(2..=MAX_ORACLE_PAIRS);
        largest = largest.max(n);
        let levels = rng.random_range(2..=200);
        let mut s = LabeledScores::default();
        for k in 0..n {
            let v = rng.random_range(0..=levels) as f64 / levels as f64 * 2.0 - 1.0;
            // Keep both classes non-empty.
            if k == 0 || (k > 1 && rng.random_bool(0.3)) {
                s.genuine.push(v);
            } else {
                s.imposter.push(v);
            }
        }
        let det = det_curve(&s, None).expect("det");
        let brute = brute_det_counts(&s);
        let same = det.points.len() == brute.len()
            && det.points.iter().zip(&brute).all(|(p, &(t, tp, fp, tn, fn_))| {
                p.threshold == t && (p.counts.tp, p.counts.fp, p.counts.tn, p.counts.fn_) == (tp, fp, tn, fn_)
            });
        if !same {
            mismatches.push(format!("DET #{inst}"));
        }

        let targets = [0.0, 1e-3, 0.01, 0.1, rng.random_range(0.0..=1.0), 1.0];
        let got = tar_at_far(&s, &targets).expect("tar@far");
        for (r, &target) in got.iter().zip(&targets) {
            let &(t, tp, ..) = brute
                .iter()
                .find(|&&(_, _, fp, _, _)| fp as f64 / s.imposter.len() as f64 <= target)
                .expect("+inf is feasible");
            if r.threshold != t || r.tar != tp as f64 / s.genuine.len() as f64 {
                mismatches.push(format!("TAR@FAR #{inst} @ {target}"));
            }
        }

        let face_count = rng.random_range(2..=150);
        let faces = random_faces(&mut rng, face_count);
        let got = rank1_confusion(&FaceTable::new(faces.clone()).expect("table")).expect("rank-1");
        if (got.probes, got.errors) != brute_rank1(&faces) {
            mismatches.push(format!("rank-1 #{inst}"));
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "{ORACLE_INSTANCES} instances (up to {largest} pairs): DET, TAR@FAR and rank-1 counts vs brute force, {} mismatches {:?}",
            mismatches.len(),
            mismatches.iter().take(5).collect::<Vec<_>>()
        ),
    )
}

fn random_faces(rng: &mut Rng, n: usize) -> Vec<FaceRecord> {
    let dim = rng.random_range(2..=8);
    let mut faces: Vec<FaceRecord> = (0..n)
        .map(|i| {
            let subgroup = Subgroup::ALL[rng.random_range(0..Subgroup::COUNT)];
            let mut feature: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            feature[0] += 1e-3;
            FaceRecord {
                face_id: format!("f{i}"),
                subject_id: format!("{}_{}", subgroup.code(), rng.random_range(0..5)),
                subgroup,
                feature,
            }
        })
        .collect();
    // Duplicate a few faces so exact ties occur.
    let dups = rng.random_range(0..3);
    for _ in 0..dups {
        let src = rng.random_range(0..faces.len());
        let mut f = faces[src].clone();
        f.face_id = format!("dup{}", faces.len());
        faces.push(f);
    }
    faces
}

fn error_concentration() -> Outcome {
    let faces = generate_embeddings(&presets::overlap(606)).expect("corpus");
    let conf = rank1_confusion(&faces).expect("rank-1");
    let total = conf.total_errors();
    let diag = conf.diagonal_errors();
    let share = if total == 0 { 0.0 } else { diag as f64 / total as f64 };
    check(
        total > 0 && share >= MIN_DIAGONAL_SHARE,
        format!(
            "{diag} of {total} rank-1 errors on the diagonal ({:.2}%, need >= {:.0}%) over {} probes",
            100.0 * share,
            100.0 * MIN_DIAGONAL_SHARE,
            faces.len()
        ),
    )
}

fn list_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").to_path_buf();
                out.insert(rel, std::fs::read(&p).expect("read"));
            }
        }
    }
    out
}

fn small_manifest(dir: &Path, seed: u64) -> pipeline::Manifest {
    let faces = generate_embeddings(&presets::skew_small(seed)).expect("corpus");
    let mut m = pipeline::write_dataset(dir, &faces, false).expect("dataset");
    m.run.seed = seed;
    m.curation.faces_per_subject = 6;
    m
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut m = small_manifest(tmp.path(), 707);
    m.run.output_dir = Some(tmp.path().join("a"));
    if let Err(e) = run_pipeline(&m) {
        return check(false, format!("first run failed: {e}"));
    }
    // Second run on a single worker thread.
    m.run.output_dir = Some(tmp.path().join("b"));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    if let Err(e) = pool.install(|| run_pipeline(&m)) {
        return check(false, format!("second run failed: {e}"));
    }
    let a = list_files(&tmp.path().join("a"));
    let b = list_files(&tmp.path().join("b"));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    check(
        differing.is_empty() && !a.is_empty(),
        format!(
            "{} files compared across two runs (multi- and single-threaded), {} differ {:?}",
            a.len(),
            differing.len(),
            differing
        ),
    )
}

fn fold_hygiene() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // Full pipeline: pair-list hygiene and calibration/evaluation disjointness.
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut m = small_manifest(tmp.path(), 808);
    m.run.output_dir = Some(tmp.path().join("out"));
    match run_pipeline(&m) {
        Ok(out) => {
            let h = check_fold_hygiene(&out.curation.pairs, &out.faces).expect("hygiene");
            let overlap =
                calibration_overlap(&out.curation.pairs, &out.faces, &out.report.calibration_folds).expect("overlap");
            pass &= h.is_clean() && overlap.is_empty();
            notes.push(format!(
                "pipeline: {} multi-fold subjects, {} calibration overlaps",
                h.subjects_in_multiple_folds.len(),
                overlap.len()
            ));
        }
        Err(e) => {
            pass = false;
            notes.push(format!("pipeline failed: {e}"));
        }
    }

    // Full-size curation with every other fold as calibration data.
    let faces = generate_embeddings(&presets::skew(809)).expect("corpus");
    let c = curate(
        &faces,
        &CurationConfig {
            seed: 809,
            ..Default::default()
        },
    )
    .expect("curation");
    let h = check_fold_hygiene(&c.pairs, &faces).expect("hygiene");
    let cal: BTreeMap<u32, Vec<u32>> = (1..=5).map(|f| (f, (1..=5).filter(|&g| g != f).collect())).collect();
    let overlap = calibration_overlap(&c.pairs, &faces, &cal).expect("overlap");
    pass &= h.is_clean() && overlap.is_empty();
    notes.push(format!(
        "{} pairs / {} subjects: {} multi-fold subjects, {} calibration overlaps",
        c.pairs.len(),
        c.samples.len(),
        h.subjects_in_multiple_folds.len(),
        overlap.len()
    ));

    // The check must notice a planted leak.
    let mut leaked = c.pairs.clone();
    let p = &c.pairs[0];
    leaked.push(PairRecord::new(
        p.face_a.clone(),
        p.face_b.clone(),
        PairKind::Positive,
        p.fold % 5 + 1,
    ));
    let h = check_fold_hygiene(&leaked, &faces).expect("hygiene");
    let caught = !h.is_clean() && !calibration_overlap(&leaked, &faces, &cal).expect("overlap").is_empty();
    pass &= caught;
    notes.push(format!("planted leak detected: {caught}"));

    check(pass, notes.join("; "))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("count reproduction", count_reproduction),
        ("calibration exactness", calibration_exactness),
        ("skew reproduction", skew_reproduction),
        ("TAR improvement direction", tar_direction),
        ("oracle equivalence", oracle_equivalence),
        ("intra-subgroup error concentration", error_concentration),
        ("determinism", determinism),
        ("fold hygiene", fold_hygiene),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = std::panic::catch_unwind(f).unwrap_or_else(|_| check(false, "panicked"));
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{}] {name}: {} ({:.1} s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
