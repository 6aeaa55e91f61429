//! Faces, verification pairs and the face table they reference.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subgroup::Subgroup;

/// One embedded face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub face_id: String,
    pub subject_id: String,
    pub subgroup: Subgroup,
    pub feature: Vec<f64>,
}

/// Checks that a feature vector is finite with nonzero norm.
pub fn check_feature(feature: &[f64]) -> Result<()> {
    if feature.is_empty() {
        return Err(Error::InvalidInput("empty feature vector".into()));
    }
    if let Some(i) = feature.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite feature entry at index {i}")));
    }
    if feature.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidInput("zero-norm feature vector".into()));
    }
    Ok(())
}

/// Read-only, validated collection of faces sharing one dimensionality.
#[derive(Debug, Clone, Default)]
pub struct FaceTable {
    records: Vec<FaceRecord>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl FaceTable {
    pub fn new(records: Vec<FaceRecord>) -> Result<Self> {
        let dim = records.first().map(|r| r.feature.len()).unwrap_or(0);
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.feature.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.feature.len(),
                });
            }
            check_feature(&r.feature).map_err(|e| Error::InvalidInput(format!("face `{}`: {e}", r.face_id)))?;
            if index.insert(r.face_id.clone(), i).is_some() {
                return Err(Error::DuplicateFace(r.face_id.clone()));
            }
        }
        Ok(FaceTable { records, index, dim })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[FaceRecord] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = &FaceRecord> {
        self.records.iter()
    }

    pub fn position(&self, face_id: &str) -> Option<usize> {
        self.index.get(face_id).copied()
    }

    pub fn get(&self, face_id: &str) -> Option<&FaceRecord> {
        self.position(face_id).map(|i| &self.records[i])
    }

    /// Like [`FaceTable::get`], but a missing id is an error.
    pub fn resolve(&self, face_id: &str) -> Result<&FaceRecord> {
        self.get(face_id)
            .ok_or_else(|| Error::DanglingFace(face_id.to_string()))
    }

    /// Face indices grouped by subject, subjects in id order, faces in table order.
    pub fn by_subject(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.subject_id.as_str()).or_default().push(i);
        }
        out
    }

    /// (faces, subjects) per subgroup.
    pub fn subgroup_counts(&self) -> BTreeMap<Subgroup, (usize, usize)> {
        let mut subjects: BTreeMap<Subgroup, std::collections::BTreeSet<&str>> = BTreeMap::new();
        let mut faces: BTreeMap<Subgroup, usize> = BTreeMap::new();
        for r in &self.records {
            *faces.entry(r.subgroup).or_default() += 1;
            subjects.entry(r.subgroup).or_default().insert(&r.subject_id);
        }
        faces.into_iter().map(|(s, n)| (s, (n, subjects[&s].len()))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Genuine,
    Imposter,
}

impl Label {
    /// `1` for genuine, `0` for imposter, as in the pair-list files.
    pub fn as_digit(self) -> u8 {
        match self {
            Label::Genuine => 1,
            Label::Imposter => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Positive,
    NegativeWithin,
    NegativeCross,
}

impl PairKind {
    pub fn label(self) -> Label {
        match self {
            PairKind::Positive => Label::Genuine,
            _ => Label::Imposter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Positive => "positive",
            PairKind::NegativeWithin => "negative_within",
            PairKind::NegativeCross => "negative_cross",
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(PairKind::Positive),
            "negative_within" => Ok(PairKind::NegativeWithin),
            "negative_cross" => Ok(PairKind::NegativeCross),
            _ => Err(Error::InvalidInput(format!("unknown pair kind `{s}`"))),
        }
    }
}

/// A verification trial between two faces, assigned to one fold.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairRecord {
    pub face_a: String,
    pub face_b: String,
    pub label: Label,
    pub kind: PairKind,
    pub fold: u32,
}

impl PairRecord {
    pub fn new(face_a: impl Into<String>, face_b: impl Into<String>, kind: PairKind, fold: u32) -> Self {
        PairRecord {
            face_a: face_a.into(),
            face_b: face_b.into(),
            label: kind.label(),
            kind,
            fold,
        }
    }

    /// Checks the pair against the faces it references.
    pub fn validate(&self, faces: &FaceTable, folds: u32) -> Result<()> {
        let a = faces.resolve(&self.face_a)?;
        let b = faces.resolve(&self.face_b)?;
        let bad = |msg: &str| {
            Err(Error::InvalidInput(format!(
                "pair ({}, {}): {msg}",
                self.face_a, self.face_b
            )))
        };
        if self.face_a == self.face_b {
            return bad("a face cannot be paired with itself");
        }
        if self.fold == 0 || self.fold > folds {
            return bad("fold out of range");
        }
        let same_subject = a.subject_id == b.subject_id;
        if (self.label == Label::Genuine) != same_subject || (self.kind == PairKind::Positive) != same_subject {
            return bad("label disagrees with subject ids");
        }
        match self.kind {
            PairKind::NegativeWithin if a.subgroup != b.subgroup => bad("within-subgroup negative spans subgroups"),
            PairKind::NegativeCross if a.subgroup == b.subgroup => bad("cross-subgroup negative within one subgroup"),
            _ => Ok(()),
        }
    }
}

/// A pair together with its similarity score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: PairRecord,
    pub score: f64,
}
