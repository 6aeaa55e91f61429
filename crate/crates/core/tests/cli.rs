use std::path::Path;
use std::process::{Command, Output};

fn facebias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facebias"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth(dir: &Path) -> String {
    let out = dir.to_str().unwrap();
    let o = facebias(&[
        "--seed",
        "3",
        "--folds",
        "3",
        "--out",
        out,
        "synth",
        "--preset",
        "skew-small",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("manifest.toml").to_str().unwrap().to_string()
}

#[test]
fn report_succeeds_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = facebias(&[
            "--intended-fpr",
            "0.1",
            "--intended-fpr",
            "0.01",
            "--out",
            out.to_str().unwrap(),
            "report",
            &manifest,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("per-subgroup"));
    }
    for f in [
        "eval_rows.csv",
        "tar_at_far.csv",
        "summary.toml",
        "det/all.tsv",
        "confusion_rank1.csv",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let header = std::fs::read_to_string(tmp.path().join("a/tar_at_far.csv")).unwrap();
    assert!(header.starts_with("slice,policy,0.1,0.01\n"), "{header}");
}

#[test]
fn single_fold_exits_with_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let o = facebias(&["--folds", "1", "report", &manifest]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("folds must be >= 2"));
}

#[test]
fn missing_file_exits_with_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = facebias(&["report", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn tampered_dataset_exits_with_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let meta = tmp.path().join("metadata.csv");
    let mut text = std::fs::read_to_string(&meta).unwrap();
    text.push('\n');
    std::fs::write(&meta, text).unwrap();
    let o = facebias(&["report", &manifest]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn stage_failure_exits_with_pipeline_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(
        &manifest,
        text.replace("negative_multiplier = 1.0", "negative_multiplier = 50.0"),
    )
    .unwrap();
    let o = facebias(&["report", &manifest]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("stage `curate` failed"), "{stderr}");
    assert!(tmp.path().join("report/INCOMPLETE").exists());
}

#[test]
fn bad_flag_value_is_rejected() {
    let o = facebias(&["--policy", "sometimes", "report", "m.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stepwise_subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let work = tmp.path().join("work");
    let w = work.to_str().unwrap();
    let meta = tmp.path().join("metadata.csv");
    let features = tmp.path().join("features.bin");

    let o = facebias(&[
        "ingest",
        "--features",
        features.to_str().unwrap(),
        "--metadata",
        meta.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("total         768        96"));

    let o = facebias(&["--out", w, "curate", &manifest]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pairs = work.join("pairs.tsv");

    let o = facebias(&["pairs", &manifest, "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("AF             72        12        180        360"),
        "{stdout}"
    );
    assert!(stdout.contains("0 subject(s) in several folds"));

    let o = facebias(&["--out", w, "score", &manifest, "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scores = work.join("scores.csv");

    let o = facebias(&[
        "--out",
        w,
        "--intended-fpr",
        "0.1",
        "evaluate",
        "--scores",
        scores.to_str().unwrap(),
        "--metadata",
        meta.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(work.join("eval_rows.csv").is_file());

    let o = facebias(&[
        "--out",
        w,
        "--policy",
        "per-subgroup",
        "--intended-fpr",
        "0.1",
        "calibrate",
        "--scores",
        scores.to_str().unwrap(),
        "--metadata",
        meta.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cal = std::fs::read_to_string(work.join("calibration.csv")).unwrap();
    assert_eq!(cal.lines().count(), 1 + 8);
}

#[test]
fn pairs_with_a_leaking_list_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let pairs = tmp.path().join("leak.tsv");
    // Same subject in two folds.
    std::fs::write(
        &pairs,
        "AF_0000_000\tAF_0000_001\t1\t1\tpositive\nAF_0000_002\tAF_0000_003\t1\t2\tpositive\n",
    )
    .unwrap();
    let o = facebias(&["pairs", &manifest, "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 subject(s) in several folds"));
}
