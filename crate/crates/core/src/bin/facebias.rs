//! `facebias` command-line tool.
//!
//! Exit status: 0 on success, 2 for bad input (files, manifests, flags),
//! 3 when a pipeline stage fails on valid input, 4 on an internal fault.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use facebias::calibration::{calibrate, evaluate_policy, EvalConfig, EvalReport};
use facebias::curation::{calibration_overlap, check_fold_hygiene, curate, pair_counts};
use facebias::io;
use facebias::matcher::score_pairs;
use facebias::metrics::{group_by_fold_with, pool};
use facebias::pipeline::{self, Manifest, Overrides, RunSpec};
use facebias::synth::{generate_embeddings, presets};
use facebias::{Error, FaceTable, PolicyMode, Result, Subgroup};

const EXIT_INPUT: u8 = 2;
const EXIT_PIPELINE: u8 = 3;
const EXIT_FAULT: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "facebias",
    version,
    about = "Demographic bias audit for face verification scores"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of subject-disjoint folds.
    #[arg(long, global = true)]
    folds: Option<u32>,
    /// Intended false positive rate (repeatable).
    #[arg(long = "intended-fpr", global = true)]
    intended_fpr: Vec<f64>,
    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyMode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Calibrate on the evaluation fold itself instead of the other folds.
    #[arg(long, global = true)]
    resubstitution: bool,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            folds: self.folds,
            intended_fpr: self.intended_fpr.clone(),
            policy: self.policy,
            output_dir: self.out.clone(),
            resubstitution: self.resubstitution,
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("--out DIR is required".into()))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeatureFormat {
    Bin,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and a manifest pointing at it.
    Synth {
        #[arg(long, default_value = "skew")]
        preset: String,
        /// Override subjects per subgroup.
        #[arg(long)]
        subjects: Option<usize>,
        /// Override faces per subject.
        #[arg(long)]
        faces: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, value_enum, default_value = "bin")]
        format: FeatureFormat,
        /// Skip rank-1 search in the generated manifest.
        #[arg(long)]
        no_rank1: bool,
    },
    /// Validate a feature file against its metadata and print per-subgroup counts.
    Ingest {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Prune, sample and split a manifest's dataset; writes the pair list.
    Curate { manifest: PathBuf },
    /// Print pair counts and fold hygiene for a pair list.
    Pairs {
        manifest: PathBuf,
        /// Existing pair list; curated afresh when omitted.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Score a pair list with cosine similarity.
    Score {
        manifest: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Evaluate global and per-subgroup thresholds fold by fold.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Calibrate thresholds on all scored pairs.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
    },
    /// Run every stage of a manifest and write the full report directory.
    Report { manifest: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_PIPELINE })
        }
        Err(_) => {
            eprintln!("internal error");
            ExitCode::from(EXIT_FAULT)
        }
    }
}

fn load_manifest(path: &Path, g: &Global) -> Result<Manifest> {
    let mut m = Manifest::load(path)?;
    m.apply(&g.overrides());
    m.validate()?;
    Ok(m)
}

fn manifest_out(m: &Manifest) -> Result<&Path> {
    m.run
        .output_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no output directory: pass --out DIR".into()))
}

fn load_faces(m: &Manifest) -> Result<FaceTable> {
    m.verify_checksums()?;
    io::ingest(&m.dataset.features, &m.dataset.metadata, m.dataset.feature_dim)
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth {
            preset,
            subjects,
            faces,
            dim,
            format,
            no_rank1,
        } => synth(g, preset, *subjects, *faces, *dim, *format, *no_rank1),
        Command::Ingest {
            features,
            metadata,
            dim,
        } => {
            let t = io::ingest(features, metadata, *dim)?;
            print_face_counts(&t);
            Ok(())
        }
        Command::Curate { manifest } => {
            let m = load_manifest(manifest, g)?;
            let faces = load_faces(&m)?;
            let c = curate(&faces, &m.curation_config())?;
            let path = manifest_out(&m)?.join("pairs.tsv");
            io::write_pairs(&path, &c.pairs)?;
            println!(
                "{} pairs from {} subjects ({} faces pruned, {} subjects excluded) -> {}",
                c.pairs.len(),
                c.samples.len(),
                c.removed.len(),
                c.excluded.len(),
                path.display()
            );
            Ok(())
        }
        Command::Pairs { manifest, pairs } => {
            let m = load_manifest(manifest, g)?;
            let faces = load_faces(&m)?;
            let list = match pairs {
                Some(p) => io::read_pairs(p)?,
                None => curate(&faces, &m.curation_config())?.pairs,
            };
            for p in &list {
                p.validate(&faces, m.curation.folds)?;
            }
            print_pair_counts(&list, &faces)?;
            let h = check_fold_hygiene(&list, &faces)?;
            let folds: Vec<u32> = list
                .iter()
                .map(|p| p.fold)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let cal: BTreeMap<u32, Vec<u32>> = folds
                .iter()
                .map(|&f| (f, folds.iter().copied().filter(|&o| o != f).collect()))
                .collect();
            let overlap = calibration_overlap(&list, &faces, &cal)?;
            println!(
                "fold hygiene: {} subject(s) in several folds, {} pair(s) spanning folds, {} calibration overlap(s)",
                h.subjects_in_multiple_folds.len(),
                h.pairs_spanning_folds,
                overlap.len()
            );
            if !h.is_clean() || !overlap.is_empty() {
                return Err(Error::InvalidInput("fold hygiene violated".into()));
            }
            Ok(())
        }
        Command::Score { manifest, pairs } => {
            let m = load_manifest(manifest, g)?;
            let faces = load_faces(&m)?;
            let list = io::read_pairs(pairs)?;
            let scored = score_pairs(&list, &faces)?;
            let path = manifest_out(&m)?.join("scores.csv");
            io::write_scores(&path, &scored)?;
            println!("{} scored pairs -> {}", scored.len(), path.display());
            Ok(())
        }
        Command::Evaluate { scores, metadata } => {
            let subgroups = io::read_subgroups(metadata)?;
            let scored = io::read_scores(scores)?;
            let folds = group_by_fold_with(&scored, |id| {
                subgroups
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::DanglingFace(id.to_string()))
            })?;
            let report = evaluate_policy(&folds, &eval_config(g))?;
            print_report(&report);
            if let Some(out) = &g.out {
                pipeline::write_eval_rows(&out.join("eval_rows.csv"), &report.rows)?;
                pipeline::write_eval_rows(&out.join("eval_folds.csv"), &report.per_fold)?;
                pipeline::write_wide(&out.join("tar_at_far.csv"), &report, |r| r.tar)?;
                pipeline::write_wide(&out.join("percent_diff.csv"), &report, |r| r.percent_diff)?;
            }
            Ok(())
        }
        Command::Calibrate { scores, metadata } => {
            let subgroups = io::read_subgroups(metadata)?;
            let scored = io::read_scores(scores)?;
            let folds = group_by_fold_with(&scored, |id| {
                subgroups
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::DanglingFace(id.to_string()))
            })?;
            let mut all = facebias::metrics::SubgroupScores::new();
            for groups in folds.values() {
                for (&sg, s) in groups {
                    all.entry(sg).or_default().extend(s);
                }
            }
            let cfg = eval_config(g);
            for &kind in cfg.mode.kinds() {
                for &t in &cfg.intended_fprs {
                    let c = calibrate(kind, &all, t)?;
                    println!("{kind} @ FPR {t} (pooled achieved {:.6})", c.pooled_fpr);
                    for (sg, fpr) in &c.achieved_fpr {
                        println!(
                            "  {sg}  threshold {:.6}  achieved FPR {fpr:.6}",
                            c.policy.threshold_for(*sg)?
                        );
                    }
                    for w in &c.warnings {
                        println!("  warning: {w}");
                    }
                }
            }
            if let Some(out) = &g.out {
                let run = RunSpec {
                    intended_fpr: cfg.intended_fprs.clone(),
                    policy: cfg.mode,
                    ..RunSpec::default()
                };
                pipeline::write_calibration(&out.join("calibration.csv"), &all, &run)?;
            }
            let total = pool(&all);
            println!(
                "{} genuine / {} imposter scores",
                total.genuine.len(),
                total.imposter.len()
            );
            Ok(())
        }
        Command::Report { manifest } => {
            let m = load_manifest(manifest, g)?;
            let out = pipeline::run_pipeline(&m)?;
            print_report(&out.report);
            if !out.summary.warnings.is_empty() {
                println!(
                    "{} calibration warning(s), listed in summary.toml",
                    out.summary.warnings.len()
                );
            }
            println!("report written to {}", out.dir.display());
            Ok(())
        }
    }
}

fn eval_config(g: &Global) -> EvalConfig {
    let mut run = RunSpec::default();
    if !g.intended_fpr.is_empty() {
        run.intended_fpr = g.intended_fpr.clone();
    }
    if let Some(p) = g.policy {
        run.policy = p;
    }
    run.resubstitution = g.resubstitution;
    run.eval_config()
}

fn synth(
    g: &Global,
    preset: &str,
    subjects: Option<usize>,
    faces: Option<usize>,
    dim: Option<usize>,
    format: FeatureFormat,
    no_rank1: bool,
) -> Result<()> {
    let out = g.out_dir()?;
    let seed = g.seed.unwrap_or(0);
    let mut cfg = presets::by_name(preset, seed).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset `{preset}` (known: {})",
            presets::NAMES.join(", ")
        ))
    })?;
    for s in &mut cfg.subgroups {
        if let Some(n) = subjects {
            s.subjects = n;
        }
        if let Some(n) = faces {
            s.faces_per_subject = n;
        }
    }
    if let Some(d) = dim {
        cfg.feature_dim = d;
    }
    let table = generate_embeddings(&cfg)?;

    let mut manifest = pipeline::write_dataset(out, &table, matches!(format, FeatureFormat::Csv))?;
    manifest.run.seed = seed;
    manifest.run.output_dir = Some(out.join("report"));
    manifest.run.rank1 = !no_rank1;
    // Leave headroom for pruning on presets with few faces per subject.
    let per_subject = cfg.subgroups.iter().map(|s| s.faces_per_subject).min().unwrap_or(0);
    let default_n = manifest.curation.faces_per_subject;
    if per_subject <= default_n {
        manifest.curation.faces_per_subject = (per_subject - per_subject / 4).max(2);
    }
    let mut o = g.overrides();
    o.output_dir = None;
    manifest.apply(&o);
    let mpath_toml = out.join("manifest.toml");
    manifest.save(&mpath_toml)?;
    println!(
        "{} faces of {} subjects ({} dims) -> {}",
        table.len(),
        table.by_subject().len(),
        table.dim(),
        out.display()
    );
    println!("manifest: {}", mpath_toml.display());
    Ok(())
}

fn print_face_counts(t: &FaceTable) {
    println!("{:<8} {:>8} {:>9}", "subgroup", "faces", "subjects");
    let (mut f, mut s) = (0, 0);
    for (sg, (faces, subjects)) in t.subgroup_counts() {
        println!("{:<8} {faces:>8} {subjects:>9}", sg.code());
        f += faces;
        s += subjects;
    }
    println!("{:<8} {f:>8} {s:>9}", "total");
}

fn print_pair_counts(pairs: &[facebias::PairRecord], faces: &FaceTable) -> Result<()> {
    let counts = pair_counts(pairs, faces)?;
    println!(
        "{:<8} {:>8} {:>9} {:>10} {:>10}",
        "subgroup", "faces", "subjects", "positive", "negative"
    );
    let mut total = [0usize; 4];
    for sg in Subgroup::ALL {
        let c = counts.get(&sg).copied().unwrap_or_default();
        println!(
            "{:<8} {:>8} {:>9} {:>10} {:>10}",
            sg.code(),
            c.faces,
            c.subjects,
            c.positive,
            c.negative
        );
        for (t, v) in total.iter_mut().zip([c.faces, c.subjects, c.positive, c.negative]) {
            *t += v;
        }
    }
    println!(
        "{:<8} {:>8} {:>9} {:>10} {:>10}",
        "total", total[0], total[1], total[2], total[3]
    );
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{:<6} {:<13} {:>9} {:>10} {:>8} {:>12} {:>10}",
        "slice", "policy", "fpr", "threshold", "tar", "achieved", "diff %"
    );
    for row in &r.rows {
        println!(
            "{:<6} {:<13} {:>9} {:>10.4} {:>8.4} {:>12.6} {:>10.2}",
            row.slice,
            row.policy.as_str(),
            row.intended_fpr,
            row.threshold,
            row.tar,
            row.achieved_fpr,
            row.percent_diff
        );
    }
}
