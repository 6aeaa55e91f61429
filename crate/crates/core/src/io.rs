//! File formats.
//!
//! * Metadata: CSV with header `face_id,subject_id,ethnicity,gender`.
//! * Features, binary: headerless little-endian `f32` rows, plus a sidecar
//!   `<file>.hdr` whose first line is the dimension and whose remaining lines
//!   are the face ids in row order.
//! * Features, CSV (any path ending in `.csv`): header `face_id,f0,f1,…`.
//! * Pair list: `face_a<TAB>face_b<TAB>label<TAB>fold<TAB>kind`, label `1`
//!   (genuine) or `0` (imposter), no header, LF line endings.
//! * Scored pairs: CSV `face_a,face_b,label,fold,kind,score`.
//!
//! Reals are written with Rust's shortest round-trip formatting, so every
//! table re-parses to the exact in-memory value.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::face::{check_feature, FaceRecord, FaceTable, Label, PairKind, PairRecord, ScoredPair};
use crate::subgroup::{Ethnicity, Gender, Subgroup};

const MAX_LISTED: usize = 20;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path.display(), line, format!("{kind:?}")),
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = BufReader::new(open(path)?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRow {
    pub face_id: String,
    pub subject_id: String,
    pub ethnicity: String,
    pub gender: String,
}

/// Metadata rows with parsed subgroups, in file order.
pub fn read_metadata(path: &Path) -> Result<Vec<(String, String, Subgroup)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<MetadataRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(path, e))?;
        let subgroup = row
            .ethnicity
            .parse::<Ethnicity>()
            .and_then(|e| Ok(Subgroup::new(e, row.gender.parse::<Gender>()?)))
            .map_err(|e| Error::parse(path.display(), line, e.to_string()))?;
        if row.face_id.is_empty() || row.subject_id.is_empty() {
            return Err(Error::parse(path.display(), line, "empty face_id or subject_id"));
        }
        out.push((row.face_id, row.subject_id, subgroup));
    }
    Ok(out)
}

/// face_id → subgroup, for stages that do not need features.
pub fn read_subgroups(path: &Path) -> Result<HashMap<String, Subgroup>> {
    let mut out = HashMap::new();
    for (face, _, sg) in read_metadata(path)? {
        if out.insert(face.clone(), sg).is_some() {
            return Err(Error::DuplicateFace(face));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn write_metadata(path: &Path, faces: &FaceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for f in faces.iter() {
        w.serialize(MetadataRow {
            face_id: f.face_id.clone(),
            subject_id: f.subject_id.clone(),
            ethnicity: f.subgroup.ethnicity.to_string(),
            gender: f.subgroup.gender.to_string(),
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn sidecar_path(features: &Path) -> PathBuf {
    let mut s = features.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// (face_id, feature, line) rows. `line` is 1-based in the CSV, or the row
/// number for binary input.
pub type FeatureRows = Vec<(String, Vec<f64>, usize)>;

/// Reads features in either format, chosen by extension.
pub fn read_features(path: &Path) -> Result<FeatureRows> {
    if is_csv(path) {
        read_features_csv(path)
    } else {
        read_features_bin(path)
    }
}

fn read_features_csv(path: &Path) -> Result<FeatureRows> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out = Vec::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let feature = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path.display(), line, e.to_string()))?;
        let d = *dim.get_or_insert(feature.len());
        if feature.len() != d {
            return Err(Error::parse(
                path.display(),
                line,
                format!("expected {d} values, found {}", feature.len()),
            ));
        }
        out.push((id, feature, line));
    }
    Ok(out)
}

fn read_features_bin(path: &Path) -> Result<FeatureRows> {
    let hdr = sidecar_path(path);
    let mut lines = BufReader::new(open(&hdr)?).lines();
    let dim: usize = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(&hdr, e))?
        .and_then(|l| l.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(hdr.display(), 1, "first line must be the feature dimension"))?;
    let ids: Vec<String> = lines
        .map(|l| l.map(|s| s.trim().to_string()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&hdr, e))?;
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let row_bytes = dim * 4;
    if bytes.len() != ids.len() * row_bytes {
        return Err(Error::parse(
            path.display(),
            0,
            format!(
                "{} bytes do not hold {} rows of dimension {dim}",
                bytes.len(),
                ids.len()
            ),
        ));
    }
    Ok(ids
        .into_iter()
        .zip(bytes.chunks_exact(row_bytes))
        .enumerate()
        .map(|(i, (id, row))| {
            let feature = row
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            (id, feature, i + 1)
        })
        .collect())
}

pub fn write_features_bin(path: &Path, faces: &FaceTable) -> Result<()> {
    let mut w = create(path)?;
    for f in faces.iter() {
        for &x in &f.feature {
            w.write_all(&(x as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let hdr = sidecar_path(path);
    let mut h = create(&hdr)?;
    writeln!(h, "{}", faces.dim()).map_err(|e| Error::io(&hdr, e))?;
    for f in faces.iter() {
        writeln!(h, "{}", f.face_id).map_err(|e| Error::io(&hdr, e))?;
    }
    h.flush().map_err(|e| Error::io(&hdr, e))
}

pub fn write_features_csv(path: &Path, faces: &FaceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["face_id".to_string()];
    header.extend((0..faces.dim()).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for f in faces.iter() {
        let mut rec = vec![f.face_id.clone()];
        rec.extend(f.feature.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn missing_error(side: &'static str, ids: &[&str]) -> Error {
    Error::MissingFaces {
        side,
        count: ids.len(),
        shown: ids.iter().take(MAX_LISTED).copied().collect::<Vec<_>>().join(", "),
    }
}

/// Joins features and metadata into a validated face table.
///
/// Rows are kept in metadata order. Every metadata id must have features
/// and vice versa; a zero-norm or non-finite feature is rejected with its
/// line number. `expected_dim`, when given, must match the file.
pub fn ingest(features: &Path, metadata: &Path, expected_dim: Option<usize>) -> Result<FaceTable> {
    let meta = read_metadata(metadata)?;
    if meta.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut seen = BTreeSet::new();
    for (face, _, _) in &meta {
        if !seen.insert(face.as_str()) {
            return Err(Error::DuplicateFace(face.clone()));
        }
    }
    let rows = read_features(features)?;
    let mut by_id: HashMap<&str, (&Vec<f64>, usize)> = HashMap::with_capacity(rows.len());
    for (id, feature, line) in &rows {
        check_feature(feature).map_err(|e| Error::parse(features.display(), *line, e.to_string()))?;
        if let Some(d) = expected_dim.filter(|&d| d != feature.len()) {
            return Err(Error::parse(
                features.display(),
                *line,
                format!("expected dimension {d}, found {}", feature.len()),
            ));
        }
        if by_id.insert(id.as_str(), (feature, *line)).is_some() {
            return Err(Error::DuplicateFace(id.clone()));
        }
    }

    let missing_features: Vec<&str> = meta
        .iter()
        .map(|(f, _, _)| f.as_str())
        .filter(|f| !by_id.contains_key(f))
        .collect();
    if !missing_features.is_empty() {
        return Err(missing_error("features", &missing_features));
    }
    let mut missing_meta: Vec<&str> = by_id.keys().copied().filter(|f| !seen.contains(f)).collect();
    if !missing_meta.is_empty() {
        missing_meta.sort_unstable();
        return Err(missing_error("metadata", &missing_meta));
    }

    let records = meta
        .into_iter()
        .map(|(face_id, subject_id, subgroup)| FaceRecord {
            feature: by_id[face_id.as_str()].0.clone(),
            face_id,
            subject_id,
            subgroup,
        })
        .collect();
    FaceTable::new(records)
}

pub fn format_pair(p: &PairRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        p.face_a,
        p.face_b,
        p.label.as_digit(),
        p.fold,
        p.kind
    )
}

fn parse_label(s: &str) -> Result<Label> {
    match s {
        "1" => Ok(Label::Genuine),
        "0" => Ok(Label::Imposter),
        _ => Err(Error::InvalidInput(format!("label must be 0 or 1, got `{s}`"))),
    }
}

fn build_pair(a: &str, b: &str, label: &str, fold: &str, kind: &str) -> Result<PairRecord> {
    let label = parse_label(label)?;
    let kind: PairKind = kind.parse()?;
    if kind.label() != label {
        return Err(Error::InvalidInput(format!(
            "label {} contradicts kind {kind}",
            label.as_digit()
        )));
    }
    let fold: u32 = fold
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad fold `{fold}`")))?;
    if fold == 0 {
        return Err(Error::InvalidInput("folds are numbered from 1".into()));
    }
    if a == b {
        return Err(Error::InvalidInput(format!("face `{a}` paired with itself")));
    }
    Ok(PairRecord::new(a, b, kind, fold))
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let mut w = create(path)?;
    for p in pairs {
        writeln!(w, "{}", format_pair(p)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [a, b, label, fold, kind] = cols[..] else {
            return Err(Error::parse(
                path.display(),
                i + 1,
                format!("expected 5 tab-separated columns, found {}", cols.len()),
            ));
        };
        out.push(build_pair(a, b, label, fold, kind).map_err(|e| Error::parse(path.display(), i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    face_a: String,
    face_b: String,
    label: String,
    fold: String,
    kind: String,
    score: f64,
}

pub fn write_scores(path: &Path, scored: &[ScoredPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for s in scored {
        let p = &s.pair;
        w.serialize(ScoreRow {
            face_a: p.face_a.clone(),
            face_b: p.face_b.clone(),
            label: p.label.as_digit().to_string(),
            fold: p.fold.to_string(),
            kind: p.kind.to_string(),
            score: s.score,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredPair>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let pair = build_pair(&row.face_a, &row.face_b, &row.label, &row.fold, &row.kind)
            .map_err(|e| Error::parse(path.display(), i + 2, e.to_string()))?;
        if !(-1.0..=1.0).contains(&row.score) {
            return Err(Error::parse(
                path.display(),
                i + 2,
                format!("score {} outside [-1, 1]", row.score),
            ));
        }
        out.push(ScoredPair { pair, score: row.score });
    }
    Ok(out)
}
