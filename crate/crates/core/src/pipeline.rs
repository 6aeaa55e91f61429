//! End-to-end runs driven by a TOML manifest, and the report tables they
//! write.
//!
//! A run directory holds:
//!
//! | file | contents |
//! |------|----------|
//! | `pairs.tsv` | curated pair list |
//! | `scores.csv` | scored pairs |
//! | `pruned.csv`, `excluded.csv`, `folds.csv` | curation bookkeeping |
//! | `eval_rows.csv`, `eval_folds.csv` | fold-averaged and per-fold evaluation rows |
//! | `tar_at_far.csv`, `percent_diff.csv` | wide tables, one row per (slice, policy) |
//! | `calibration.csv` | thresholds calibrated on every fold |
//! | `det/<slice>.tsv` | `threshold  fpr  fnr` plot data |
//! | `sdm_histograms.csv`, `sdm_percentiles.csv` | score distributions |
//! | `confusion_rank1.csv`, `confusion_rank1_counts.csv` | rank-1 error matrix |
//! | `summary.toml` | config, seed, versions, counts, warnings |
//!
//! While a run is in progress the directory also contains `INCOMPLETE`; it is
//! removed only after every artifact has been written. A failed run leaves the
//! marker and records the failing stage in `summary.toml`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate, evaluate_policy, EvalConfig, EvalReport, EvalRow, PolicyKind, PolicyMode, Protocol,
};
use crate::curation::{
    calibration_overlap, check_fold_hygiene, curate, pair_counts, Curation, CurationConfig, FoldHygiene, PairCounts,
};
use crate::error::{Error, Result};
use crate::face::{FaceRecord, FaceTable, ScoredPair};
use crate::io;
use crate::matcher::score_pairs;
use crate::metrics::{
    det_curve, group_by_fold, group_by_query, pool, rank1_confusion, sdm_summary, DetCurve, Rank1Confusion, SdmSummary,
    SubgroupScores, SDM_BINS, SDM_BIN_WIDTH, SDM_PERCENTILES,
};
use crate::stats::derive_seed;
use crate::subgroup::Subgroup;

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const FORMAT_VERSION: u32 = 1;

/// DET plot files keep a point only when FPR moves by this relative amount
/// or FNR by this absolute amount.
pub const DET_THIN_REL_FPR: f64 = 0.01;
pub const DET_THIN_ABS_FNR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub features: PathBuf,
    pub metadata: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seed: u64,
    pub intended_fpr: Vec<f64>,
    pub policy: PolicyMode,
    pub resubstitution: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Rank-1 search is quadratic in the number of sampled faces.
    pub rank1: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            seed: 0,
            intended_fpr: EvalConfig::default().intended_fprs,
            policy: PolicyMode::Both,
            resubstitution: false,
            output_dir: None,
            rank1: true,
        }
    }
}

impl RunSpec {
    pub fn protocol(&self) -> Protocol {
        if self.resubstitution {
            Protocol::Resubstitution
        } else {
            Protocol::CrossFold
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            intended_fprs: self.intended_fpr.clone(),
            mode: self.policy,
            protocol: self.protocol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub curation: CurationConfig,
}

/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub folds: Option<u32>,
    pub intended_fpr: Vec<f64>,
    pub policy: Option<PolicyMode>,
    pub output_dir: Option<PathBuf>,
    pub resubstitution: bool,
}

impl Manifest {
    /// Parses a manifest; relative dataset and output paths are resolved
    /// against the manifest's directory.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(path.display(), line, e.message())
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.dataset.features);
        resolve(&mut m.dataset.metadata);
        if let Some(out) = m.run.output_dir.as_mut() {
            resolve(out);
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the manifest, storing paths under its directory as relative
    /// paths so the dataset can be moved together with it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| p.strip_prefix(base).map_or_else(|_| p.to_path_buf(), Path::to_path_buf);
        let mut m = self.clone();
        m.dataset.features = rel(&self.dataset.features);
        m.dataset.metadata = rel(&self.dataset.metadata);
        m.run.output_dir = self.run.output_dir.as_deref().map(rel);
        write_text(path, &m.to_toml()?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(k) = o.folds {
            self.curation.folds = k;
        }
        if !o.intended_fpr.is_empty() {
            self.run.intended_fpr = o.intended_fpr.clone();
        }
        if let Some(p) = o.policy {
            self.run.policy = p;
        }
        if let Some(out) = &o.output_dir {
            self.run.output_dir = Some(out.clone());
        }
        if o.resubstitution {
            self.run.resubstitution = true;
        }
    }

    /// Curation config with its seed derived from the run seed.
    pub fn curation_config(&self) -> CurationConfig {
        CurationConfig {
            seed: derive_seed(self.run.seed, "curation"),
            ..self.curation.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.curation.validate()?;
        if self.run.intended_fpr.is_empty() {
            return Err(Error::Config("no intended FPR given".into()));
        }
        for &t in &self.run.intended_fpr {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("intended FPR must lie in (0, 1], got {t}")));
            }
        }
        if self.dataset.feature_dim == Some(0) {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        for p in [&self.dataset.features, &self.dataset.metadata] {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }

    /// Compares the dataset files against the manifest's checksums, returning
    /// the actual digests.
    pub fn verify_checksums(&self) -> Result<(String, String)> {
        let check = |path: &Path, expected: &Option<String>| -> Result<String> {
            let actual = io::sha256_file(path)?;
            if let Some(e) = expected {
                if !e.eq_ignore_ascii_case(&actual) {
                    return Err(Error::Checksum {
                        path: path.to_path_buf(),
                        expected: e.clone(),
                        actual,
                    });
                }
            }
            Ok(actual)
        };
        Ok((
            check(&self.dataset.features, &self.dataset.features_sha256)?,
            check(&self.dataset.metadata, &self.dataset.metadata_sha256)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// File names only, so the summary does not depend on where data lives.
    pub features: String,
    pub metadata: String,
    pub features_sha256: String,
    pub metadata_sha256: String,
    pub feature_dim: usize,
    pub faces: usize,
    pub subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurationSummary {
    pub removed_faces: usize,
    pub excluded_subjects: usize,
    pub sampled_subjects: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    /// Keyed by subgroup code.
    pub counts: BTreeMap<String, PairCounts>,
    pub hygiene: FoldHygiene,
    /// `(evaluation fold, subject)` pairs that also appear in calibration folds.
    pub calibration_overlap: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tool_version: String,
    pub format_version: u32,
    pub seed: u64,
    pub curation_seed: u64,
    pub protocol: String,
    pub policy: String,
    pub intended_fpr: Vec<f64>,
    pub curation_config: Option<CurationConfig>,
    pub dataset: Option<DatasetSummary>,
    pub curation: Option<CurationSummary>,
    /// Evaluation fold → calibration folds, keyed by fold number as text.
    pub calibration_folds: BTreeMap<String, Vec<u32>>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub summary: RunSummary,
    pub curation: Curation,
    pub faces: FaceTable,
    pub scored: Vec<ScoredPair>,
}

struct Run {
    dir: PathBuf,
    artifacts: Vec<String>,
    summary: RunSummary,
}

impl Run {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.artifacts.push(rel.to_string());
        self.dir.join(rel)
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let text = toml::to_string(summary).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&dir.join(SUMMARY_FILE), &text)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display(), 0, e.message()))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Runs every stage of a manifest and writes the run directory.
///
/// Errors are wrapped in [`Error::Stage`] naming the stage that failed; the
/// directory is then left with the `INCOMPLETE` marker and a summary whose
/// status is `incomplete`.
pub fn run_pipeline(manifest: &Manifest) -> Result<RunOutput> {
    stage("config", || manifest.validate())?;
    let dir = manifest.run.output_dir.clone().ok_or_else(|| Error::Stage {
        stage: "config",
        source: Box::new(Error::Config("no output directory given".into())),
    })?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    write_text(&marker, "")?;

    let cfg = manifest.curation_config();
    let mut run = Run {
        dir: dir.clone(),
        artifacts: Vec::new(),
        summary: RunSummary {
            status: "incomplete".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            format_version: FORMAT_VERSION,
            seed: manifest.run.seed,
            curation_seed: cfg.seed,
            protocol: match manifest.run.protocol() {
                Protocol::CrossFold => "cross-fold".into(),
                Protocol::Resubstitution => "resubstitution".into(),
            },
            policy: manifest
                .run
                .policy
                .kinds()
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(","),
            intended_fpr: manifest.run.intended_fpr.clone(),
            curation_config: Some(manifest.curation.clone()),
            ..Default::default()
        },
    };

    match run_stages(manifest, &cfg, &mut run) {
        Ok(mut out) => {
            run.artifacts.push(SUMMARY_FILE.into());
            run.artifacts.sort();
            run.summary.status = "complete".into();
            run.summary.artifacts = run.artifacts;
            write_summary(&dir, &run.summary)?;
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            out.summary = run.summary;
            Ok(out)
        }
        Err(e) => {
            if let Error::Stage { stage, .. } = &e {
                run.summary.failed_stage = Some(stage.to_string());
            }
            run.summary.error = Some(e.to_string());
            run.artifacts.sort();
            run.summary.artifacts = run.artifacts;
            // The original error matters more than a failure to record it.
            let _ = write_summary(&dir, &run.summary);
            Err(e)
        }
    }
}

fn run_stages(manifest: &Manifest, cfg: &CurationConfig, run: &mut Run) -> Result<RunOutput> {
    let ds = &manifest.dataset;
    let (features_sha256, metadata_sha256) = stage("checksum", || manifest.verify_checksums())?;

    let faces = stage("ingest", || io::ingest(&ds.features, &ds.metadata, ds.feature_dim))?;
    let subjects = faces.by_subject().len();
    run.summary.dataset = Some(DatasetSummary {
        features: file_name(&ds.features),
        metadata: file_name(&ds.metadata),
        features_sha256,
        metadata_sha256,
        feature_dim: faces.dim(),
        faces: faces.len(),
        subjects,
    });

    let curation = stage("curate", || {
        let c = curate(&faces, cfg)?;
        let hygiene = check_fold_hygiene(&c.pairs, &faces)?;
        if !hygiene.is_clean() {
            return Err(Error::InvalidInput(format!(
                "fold hygiene violated: {} subject(s) in several folds",
                hygiene.subjects_in_multiple_folds.len()
            )));
        }
        let counts = pair_counts(&c.pairs, &faces)?;
        run.summary.curation = Some(CurationSummary {
            removed_faces: c.removed.len(),
            excluded_subjects: c.excluded.len(),
            sampled_subjects: c.samples.len(),
            positive_pairs: counts.values().map(|c| c.positive).sum(),
            negative_pairs: counts.values().map(|c| c.negative).sum(),
            counts: counts.into_iter().map(|(sg, c)| (sg.code(), c)).collect(),
            hygiene,
            calibration_overlap: Vec::new(),
        });
        io::write_pairs(&run.path("pairs.tsv"), &c.pairs)?;
        write_pruned(&run.path("pruned.csv"), &c)?;
        write_excluded(&run.path("excluded.csv"), &c)?;
        write_folds(&run.path("folds.csv"), &c)?;
        Ok(c)
    })?;

    let scored = stage("score", || {
        let s = score_pairs(&curation.pairs, &faces)?;
        io::write_scores(&run.path("scores.csv"), &s)?;
        Ok(s)
    })?;

    let report = stage("evaluate", || {
        let folds = group_by_fold(&scored, &faces)?;
        let report = evaluate_policy(&folds, &manifest.run.eval_config())?;
        let overlap = calibration_overlap(&curation.pairs, &faces, &report.calibration_folds)?;
        if !overlap.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} subject(s) shared between evaluation and calibration folds",
                overlap.len()
            )));
        }
        if let Some(c) = run.summary.curation.as_mut() {
            c.calibration_overlap = overlap;
        }
        write_eval_rows(&run.path("eval_rows.csv"), &report.rows)?;
        write_eval_rows(&run.path("eval_folds.csv"), &report.per_fold)?;
        write_wide(&run.path("tar_at_far.csv"), &report, |r| r.tar)?;
        write_wide(&run.path("percent_diff.csv"), &report, |r| r.percent_diff)?;
        Ok(report)
    })?;
    run.summary.calibration_folds = report
        .calibration_folds
        .iter()
        .map(|(f, c)| (f.to_string(), c.clone()))
        .collect();
    run.summary.warnings.extend(report.warnings.iter().cloned());

    stage("metrics", || {
        let groups = group_by_query(&scored, &faces)?;
        for (&sg, s) in &groups {
            let det = det_curve(s, None)?.thinned(DET_THIN_REL_FPR, DET_THIN_ABS_FNR);
            write_det(&run.path(&format!("det/{}.tsv", sg.code())), &det)?;
        }
        let det = det_curve(&pool(&groups), None)?.thinned(DET_THIN_REL_FPR, DET_THIN_ABS_FNR);
        write_det(&run.path("det/all.tsv"), &det)?;
        let sdm = sdm_summary(&groups);
        write_sdm_histograms(&run.path("sdm_histograms.csv"), &sdm)?;
        write_sdm_percentiles(&run.path("sdm_percentiles.csv"), &sdm)?;
        if manifest.run.rank1 {
            let sampled = sampled_faces(&faces, &curation)?;
            let conf = rank1_confusion(&sampled)?;
            write_rank1(&run.path("confusion_rank1.csv"), &conf, true)?;
            write_rank1(&run.path("confusion_rank1_counts.csv"), &conf, false)?;
        }
        Ok(())
    })?;

    stage("calibrate", || {
        let groups = group_by_query(&scored, &faces)?;
        let warnings = write_calibration(&run.path("calibration.csv"), &groups, &manifest.run)?;
        run.summary.warnings.extend(warnings);
        Ok(())
    })?;

    Ok(RunOutput {
        dir: run.dir.clone(),
        report,
        summary: RunSummary::default(),
        curation,
        faces,
        scored,
    })
}

/// Writes `faces` as a feature file plus `metadata.csv` under `dir` and
/// returns a manifest for them with checksums filled in.
pub fn write_dataset(dir: &Path, faces: &FaceTable, csv_features: bool) -> Result<Manifest> {
    let features = dir.join(if csv_features { "features.csv" } else { "features.bin" });
    let metadata = dir.join("metadata.csv");
    if csv_features {
        io::write_features_csv(&features, faces)?;
    } else {
        io::write_features_bin(&features, faces)?;
    }
    io::write_metadata(&metadata, faces)?;
    Ok(Manifest {
        dataset: DatasetSpec {
            features_sha256: Some(io::sha256_file(&features)?),
            metadata_sha256: Some(io::sha256_file(&metadata)?),
            features,
            metadata,
            feature_dim: Some(faces.dim()),
        },
        run: RunSpec::default(),
        curation: CurationConfig::default(),
    })
}

/// The faces that survived pruning and sampling.
pub fn sampled_faces(faces: &FaceTable, curation: &Curation) -> Result<FaceTable> {
    let records: Vec<FaceRecord> = curation
        .samples
        .iter()
        .flat_map(|s| s.face_ids.iter())
        .map(|id| faces.resolve(id).cloned())
        .collect::<Result<_>>()?;
    FaceTable::new(records)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path.display(), line, format!("{kind:?}")),
    }
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_eval_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

pub fn read_eval_rows(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// One row per (slice, policy), one column per intended FPR.
pub fn write_wide(path: &Path, report: &EvalReport, value: impl Fn(&EvalRow) -> f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["slice".to_string(), "policy".to_string()];
    header.extend(report.intended_fprs.iter().map(|t| t.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut keys: Vec<(&str, PolicyKind)> = Vec::new();
    for r in &report.rows {
        if !keys.contains(&(r.slice.as_str(), r.policy)) {
            keys.push((&r.slice, r.policy));
        }
    }
    for (slice, policy) in keys {
        let mut rec = vec![slice.to_string(), policy.as_str().to_string()];
        for &t in &report.intended_fprs {
            rec.push(
                report
                    .row(policy, slice, t)
                    .map_or(String::new(), |r| value(r).to_string()),
            );
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Intended FPRs from the header, then `(slice, policy, values)` per row.
pub type WideTable = (Vec<f64>, Vec<(String, String, Vec<f64>)>);

/// Parses a table written by [`write_wide`].
pub fn read_wide(path: &Path) -> Result<WideTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let fprs = header
        .iter()
        .skip(2)
        .map(|h| {
            h.parse::<f64>()
                .map_err(|e| Error::parse(path.display(), 1, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::parse(path.display(), i + 2, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((rec[0].to_string(), rec[1].to_string(), values));
    }
    Ok((fprs, rows))
}

pub fn write_det(path: &Path, det: &DetCurve) -> Result<()> {
    let mut text = String::from("threshold\tfpr\tfnr\n");
    for p in &det.points {
        text.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.fpr, p.fnr));
    }
    write_text(path, &text)
}

fn label_name(l: crate::face::Label) -> &'static str {
    match l {
        crate::face::Label::Genuine => "genuine",
        crate::face::Label::Imposter => "imposter",
    }
}

pub fn write_sdm_histograms(path: &Path, sdm: &SdmSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subgroup", "label", "bin_lo", "bin_hi", "count"])
        .map_err(|e| csv_error(path, e))?;
    for e in &sdm.entries {
        for (i, &c) in e.histogram.iter().enumerate().take(SDM_BINS) {
            let lo = -1.0 + i as f64 * SDM_BIN_WIDTH;
            w.write_record([
                e.subgroup.code(),
                label_name(e.label).to_string(),
                format!("{lo:.2}"),
                format!("{:.2}", lo + SDM_BIN_WIDTH),
                c.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

pub fn write_sdm_percentiles(path: &Path, sdm: &SdmSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["subgroup".to_string(), "label".into(), "count".into()];
    header.extend(SDM_PERCENTILES.iter().map(|p| format!("p{p}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for e in &sdm.entries {
        let mut rec = vec![e.subgroup.code(), label_name(e.label).to_string(), e.count.to_string()];
        rec.extend((0..SDM_PERCENTILES.len()).map(|i| e.percentiles.get(i).map_or(String::new(), f64::to_string)));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Rows are probe subgroups, columns neighbor subgroups; cells are either
/// percentages of the row's probes or raw counts.
pub fn write_rank1(path: &Path, conf: &Rank1Confusion, percent: bool) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["probe".to_string(), "probes".into()];
    header.extend(Subgroup::ALL.iter().map(|s| s.code()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for probe in Subgroup::ALL {
        let mut rec = vec![probe.code(), conf.probes[probe.index()].to_string()];
        for n in Subgroup::ALL {
            rec.push(if percent {
                conf.percent(probe, n).to_string()
            } else {
                conf.errors[probe.index()][n.index()].to_string()
            });
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Thresholds calibrated on all folds together, one row per
/// (policy, intended FPR, subgroup). Returns calibration warnings.
pub fn write_calibration(path: &Path, groups: &SubgroupScores, run: &RunSpec) -> Result<Vec<String>> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "intended_fpr", "subgroup", "threshold", "achieved_fpr"])
        .map_err(|e| csv_error(path, e))?;
    let mut warnings = Vec::new();
    for &kind in run.policy.kinds() {
        for &t in &run.intended_fpr {
            let c = calibrate(kind, groups, t)?;
            warnings.extend(c.warnings.iter().map(|w| format!("all folds, {kind} @ {t}: {w}")));
            for (&sg, fpr) in &c.achieved_fpr {
                w.write_record([
                    kind.as_str().to_string(),
                    t.to_string(),
                    sg.code(),
                    c.policy.threshold_for(sg)?.to_string(),
                    fpr.to_string(),
                ])
                .map_err(|e| csv_error(path, e))?;
            }
        }
    }
    finish(path, w)?;
    Ok(warnings)
}

fn write_pruned(path: &Path, c: &Curation) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in &c.removed {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

fn write_excluded(path: &Path, c: &Curation) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in &c.excluded {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

fn write_folds(path: &Path, c: &Curation) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject_id", "subgroup", "fold", "faces"])
        .map_err(|e| csv_error(path, e))?;
    for s in &c.samples {
        let fold = c.folds.fold_of(&s.subject_id).unwrap_or(0);
        w.write_record([
            s.subject_id.clone(),
            s.subgroup.code(),
            fold.to_string(),
            s.face_ids.len().to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}
