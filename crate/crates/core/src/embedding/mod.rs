//! Labeled embedding sets: types, validation and normalization.
//!
//! File formats live in [`io`], subject-disjoint folds in [`folds`].

pub mod folds;
pub mod io;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

pub use folds::{assign_folds, FoldAssignment};
pub use io::{load_embeddings, save_embeddings, EmbeddingFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ethnicity {
    #[serde(rename = "A")]
    Asian,
    #[serde(rename = "B")]
    Black,
    #[serde(rename = "I")]
    Indian,
    #[serde(rename = "W")]
    White,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Gender::Female => 'F',
            Gender::Male => 'M',
        }
    }
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 4] = [
        Ethnicity::Asian,
        Ethnicity::Black,
        Ethnicity::Indian,
        Ethnicity::White,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Ethnicity::Asian => 'A',
            Ethnicity::Black => 'B',
            Ethnicity::Indian => 'I',
            Ethnicity::White => 'W',
        }
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Gender::Female),
            "M" => Ok(Gender::Male),
            other => Err(Error::format("gender", format!("expected F or M, got {other:?}"))),
        }
    }
}

impl FromStr for Ethnicity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Ethnicity::Asian),
            "B" => Ok(Ethnicity::Black),
            "I" => Ok(Ethnicity::Indian),
            "W" => Ok(Ethnicity::White),
            other => Err(Error::format(
                "ethnicity",
                format!("expected one of A, B, I, W, got {other:?}"),
            )),
        }
    }
}

/// Demographic cell: one ethnicity crossed with one gender.
///
/// Orders as AF, AM, BF, BM, IF, IM, WF, WM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubgroupLabel {
    pub ethnicity: Ethnicity,
    pub gender: Gender,
}

impl SubgroupLabel {
    pub fn new(ethnicity: Ethnicity, gender: Gender) -> Self {
        Self { ethnicity, gender }
    }

    /// All eight cells in canonical order.
    pub fn all() -> Vec<SubgroupLabel> {
        SubgroupScheme::full().labels()
    }

    /// Two-letter code such as `AF` or `WM`.
    pub fn code(&self) -> String {
        format!("{}{}", self.ethnicity.letter(), self.gender.letter())
    }
}

impl fmt::Display for SubgroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.ethnicity.letter(), self.gender.letter())
    }
}

impl FromStr for SubgroupLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(e), Some(g), None) => Ok(SubgroupLabel::new(
                e.to_string().parse()?,
                g.to_string().parse()?,
            )),
            _ => Err(Error::format("subgroup", format!("expected two letters, got {s:?}"))),
        }
    }
}

impl Serialize for SubgroupLabel {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for SubgroupLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The declared gender and ethnicity values of a set; `K` is their product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupScheme {
    pub genders: Vec<Gender>,
    pub ethnicities: Vec<Ethnicity>,
}

impl SubgroupScheme {
    pub fn full() -> Self {
        Self {
            genders: Gender::ALL.to_vec(),
            ethnicities: Ethnicity::ALL.to_vec(),
        }
    }

    pub fn new(mut genders: Vec<Gender>, mut ethnicities: Vec<Ethnicity>) -> Result<Self> {
        genders.sort();
        genders.dedup();
        ethnicities.sort();
        ethnicities.dedup();
        if genders.is_empty() || ethnicities.is_empty() {
            return Err(Error::InvalidConfig(
                "subgroup scheme needs at least one gender and one ethnicity".into(),
            ));
        }
        Ok(Self {
            genders,
            ethnicities,
        })
    }

    pub fn num_subgroups(&self) -> usize {
        self.genders.len() * self.ethnicities.len()
    }

    /// Combined index `k = ethnicity_position * |genders| + gender_position`.
    pub fn index_of(&self, label: SubgroupLabel) -> Option<usize> {
        let e = self.ethnicities.iter().position(|&x| x == label.ethnicity)?;
        let g = self.genders.iter().position(|&x| x == label.gender)?;
        Some(e * self.genders.len() + g)
    }

    pub fn label_of(&self, k: usize) -> Option<SubgroupLabel> {
        if k >= self.num_subgroups() {
            return None;
        }
        let n_g = self.genders.len();
        Some(SubgroupLabel::new(self.ethnicities[k / n_g], self.genders[k % n_g]))
    }

    pub fn labels(&self) -> Vec<SubgroupLabel> {
        (0..self.num_subgroups())
            .map(|k| self.label_of(k).expect("in range"))
            .collect()
    }
}

/// Where an embedding set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Loaded,
    Synthetic,
    Debiased,
}

/// One feature vector with its identity and subgroup labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S> {
    pub sample_id: String,
    /// Dense identity index in `[0, I)`.
    pub subject_id: usize,
    /// Subject identifier as it appeared in the source.
    pub subject_key: String,
    pub subgroup: SubgroupLabel,
    pub vector: Vec<S>,
}

/// A validated collection of embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<S> {
    embeddings: Vec<Embedding<S>>,
    dim: usize,
    num_identities: usize,
    scheme: SubgroupScheme,
    provenance: Provenance,
}

/// Unvalidated row used to assemble an [`EmbeddingSet`].
#[derive(Debug, Clone)]
pub struct RawEmbedding<S> {
    pub sample_id: String,
    pub subject_key: String,
    pub subgroup: SubgroupLabel,
    pub vector: Vec<S>,
}

impl<S: Scalar> EmbeddingSet<S> {
    /// Validates rows and re-indexes subjects densely in order of first appearance.
    ///
    /// With `scheme == None` the scheme is inferred from the labels present.
    pub fn from_raw(
        rows: Vec<RawEmbedding<S>>,
        scheme: Option<SubgroupScheme>,
        provenance: Provenance,
    ) -> Result<Self> {
        let dim = rows.first().map(|r| r.vector.len()).unwrap_or(0);
        let scheme = match scheme {
            Some(s) => s,
            None if rows.is_empty() => SubgroupScheme::full(),
            None => SubgroupScheme::new(
                rows.iter().map(|r| r.subgroup.gender).collect(),
                rows.iter().map(|r| r.subgroup.ethnicity).collect(),
            )?,
        };
        let mut seen = HashSet::with_capacity(rows.len());
        let mut subject_index: HashMap<String, (usize, SubgroupLabel)> = HashMap::new();
        let mut embeddings = Vec::with_capacity(rows.len());
        for row in rows {
            if row.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    sample_id: row.sample_id,
                    expected: dim,
                    found: row.vector.len(),
                });
            }
            if scheme.index_of(row.subgroup).is_none() {
                return Err(Error::format(
                    format!("sample {}", row.sample_id),
                    format!("subgroup {} not in the declared scheme", row.subgroup),
                ));
            }
            if !seen.insert(row.sample_id.clone()) {
                return Err(Error::DuplicateSample(row.sample_id));
            }
            let next = subject_index.len();
            let (subject_id, subgroup) = *subject_index
                .entry(row.subject_key.clone())
                .or_insert((next, row.subgroup));
            if subgroup != row.subgroup {
                return Err(Error::SubjectSpansSubgroups {
                    subject: row.subject_key,
                });
            }
            embeddings.push(Embedding {
                sample_id: row.sample_id,
                subject_id,
                subject_key: row.subject_key,
                subgroup: row.subgroup,
                vector: row.vector,
            });
        }
        Ok(Self {
            embeddings,
            dim,
            num_identities: subject_index.len(),
            scheme,
            provenance,
        })
    }

    pub fn embeddings(&self) -> &[Embedding<S>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn num_subgroups(&self) -> usize {
        self.scheme.num_subgroups()
    }

    pub fn scheme(&self) -> &SubgroupScheme {
        &self.scheme
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Combined subgroup index of sample `i`.
    pub fn subgroup_index(&self, i: usize) -> usize {
        self.scheme
            .index_of(self.embeddings[i].subgroup)
            .expect("validated on construction")
    }

    /// Subgroup of each dense subject id.
    pub fn subject_subgroups(&self) -> Vec<SubgroupLabel> {
        let mut out = vec![None; self.num_identities];
        for e in &self.embeddings {
            out[e.subject_id] = Some(e.subgroup);
        }
        out.into_iter().map(|s| s.expect("dense subject ids")).collect()
    }

    /// Original key of each dense subject id.
    pub fn subject_keys(&self) -> Vec<String> {
        let mut out = vec![String::new(); self.num_identities];
        for e in &self.embeddings {
            if out[e.subject_id].is_empty() {
                out[e.subject_id] = e.subject_key.clone();
            }
        }
        out
    }

    /// Subgroups that actually have members, in canonical order.
    pub fn present_subgroups(&self) -> Vec<SubgroupLabel> {
        self.embeddings
            .iter()
            .map(|e| e.subgroup)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Row-major `len × dim` copy of all vectors.
    pub fn matrix(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for e in &self.embeddings {
            out.extend_from_slice(&e.vector);
        }
        out
    }

    /// Samples at `indices`, in that order, with subjects re-indexed densely.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let rows = indices
            .iter()
            .map(|&i| {
                let e = &self.embeddings[i];
                RawEmbedding {
                    sample_id: e.sample_id.clone(),
                    subject_key: e.subject_key.clone(),
                    subgroup: e.subgroup,
                    vector: e.vector.clone(),
                }
            })
            .collect();
        Self::from_raw(rows, Some(self.scheme.clone()), self.provenance)
            .expect("subset of a valid set is valid")
    }

    /// Same labels, new vectors (one per embedding, any shared dimension).
    pub fn with_vectors(&self, vectors: Vec<Vec<S>>, provenance: Provenance) -> Result<Self> {
        if vectors.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "with_vectors",
                expected: format!("{} vectors", self.len()),
                found: format!("{} vectors", vectors.len()),
            });
        }
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        let mut embeddings = self.embeddings.clone();
        for (e, v) in embeddings.iter_mut().zip(vectors) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    sample_id: e.sample_id.clone(),
                    expected: dim,
                    found: v.len(),
                });
            }
            e.vector = v;
        }
        Ok(Self {
            embeddings,
            dim,
            num_identities: self.num_identities,
            scheme: self.scheme.clone(),
            provenance,
        })
    }

    /// Converts every component to another scalar type.
    pub fn cast<T: Scalar>(&self) -> EmbeddingSet<T> {
        EmbeddingSet {
            embeddings: self
                .embeddings
                .iter()
                .map(|e| Embedding {
                    sample_id: e.sample_id.clone(),
                    subject_id: e.subject_id,
                    subject_key: e.subject_key.clone(),
                    subgroup: e.subgroup,
                    vector: e.vector.iter().map(|&x| T::of(x.as_f64())).collect(),
                })
                .collect(),
            dim: self.dim,
            num_identities: self.num_identities,
            scheme: self.scheme.clone(),
            provenance: self.provenance,
        }
    }

    /// Index of each sample id.
    pub fn sample_index(&self) -> HashMap<&str, usize> {
        self.embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (e.sample_id.as_str(), i))
            .collect()
    }
}

/// Scales every vector to unit Euclidean norm.
pub fn l2_normalize<S: Scalar>(set: &EmbeddingSet<S>) -> Result<EmbeddingSet<S>> {
    let tiny = S::of(1e-12);
    let mut out = set.clone();
    for e in &mut out.embeddings {
        let n = scalar::norm(&e.vector);
        if !(n > tiny) {
            return Err(Error::ZeroNorm(e.sample_id.clone()));
        }
        for x in &mut e.vector {
            *x /= n;
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn raw(sample: &str, subject: &str, sg: &str, v: &[f64]) -> RawEmbedding<f64> {
        RawEmbedding {
            sample_id: sample.into(),
            subject_key: subject.into(),
            subgroup: sg.parse().unwrap(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn combined_index_is_a_bijection() {
        let scheme = SubgroupScheme::full();
        assert_eq!(scheme.num_subgroups(), 8);
        for k in 0..8 {
            let label = scheme.label_of(k).unwrap();
            assert_eq!(scheme.index_of(label), Some(k));
        }
        let codes: Vec<String> = scheme.labels().iter().map(|l| l.code()).collect();
        assert_eq!(codes, ["AF", "AM", "BF", "BM", "IF", "IM", "WF", "WM"]);
        assert!(scheme.label_of(8).is_none());
    }

    #[test]
    fn reduced_scheme_has_product_size() {
        let scheme = SubgroupScheme::new(Gender::ALL.to_vec(), vec![Ethnicity::White]).unwrap();
        assert_eq!(scheme.num_subgroups(), 2);
        assert_eq!(scheme.index_of("WM".parse().unwrap()), Some(1));
        assert_eq!(scheme.index_of("AM".parse().unwrap()), None);
    }

    #[test]
    fn subjects_are_reindexed_densely() {
        let set = EmbeddingSet::from_raw(
            vec![
                raw("a", "77", "AF", &[1.0, 0.0]),
                raw("b", "12", "WM", &[0.0, 1.0]),
                raw("c", "77", "AF", &[1.0, 1.0]),
            ],
            None,
            Provenance::Loaded,
        )
        .unwrap();
        assert_eq!(set.num_identities(), 2);
        let ids: Vec<usize> = set.embeddings().iter().map(|e| e.subject_id).collect();
        assert_eq!(ids, [0, 1, 0]);
        assert_eq!(set.subject_keys(), ["77", "12"]);
    }

    #[test]
    fn subject_spanning_subgroups_is_rejected() {
        let err = EmbeddingSet::from_raw(
            vec![raw("a", "1", "AF", &[1.0]), raw("b", "1", "AM", &[1.0])],
            None,
            Provenance::Loaded,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SubjectSpansSubgroups { .. }));
    }

    #[test]
    fn duplicate_sample_is_rejected() {
        let err = EmbeddingSet::from_raw(
            vec![raw("a", "1", "AF", &[1.0]), raw("a", "2", "AF", &[1.0])],
            None,
            Provenance::Loaded,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateSample(s) if s == "a"));
    }

    #[test]
    fn normalize_three_four_five() {
        let set = EmbeddingSet::from_raw(
            vec![raw("a", "1", "AF", &[3.0, 4.0])],
            None,
            Provenance::Loaded,
        )
        .unwrap();
        let n = l2_normalize(&set).unwrap();
        let v = &n.embeddings()[0].vector;
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let again = l2_normalize(&n).unwrap();
        for (a, b) in again.embeddings()[0].vector.iter().zip(v) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_zero_vector_names_sample() {
        let set = EmbeddingSet::from_raw(
            vec![raw("zero-7", "1", "AF", &[0.0, 0.0])],
            None,
            Provenance::Loaded,
        )
        .unwrap();
        match l2_normalize(&set) {
            Err(Error::ZeroNorm(id)) => assert_eq!(id, "zero-7"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
