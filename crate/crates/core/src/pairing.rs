//! Genuine/imposter pair construction under the subject-disjoint fold protocol.
//!
//! Genuine pairs are every unordered same-subject sample pair. Imposter pairs
//! are drawn within one subgroup and one fold, so each imposter is attributable
//! to exactly one subgroup and no pair straddles a train/test boundary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, FoldAssignment, SubgroupLabel};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// Imposter-to-genuine ratio of the full-scale benchmark (681,379 : 240,000).
pub const DEFAULT_IMPOSTER_RATIO: f64 = 2.84;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Genuine,
    Imposter,
}

impl PairLabel {
    pub fn is_genuine(self) -> bool {
        self == PairLabel::Genuine
    }

    fn as_str(self) -> &'static str {
        match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Imposter => "imposter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: PairLabel,
    pub subgroup: SubgroupLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ImposterPolicy {
    /// Every within-subgroup, within-fold cross-subject pair.
    Exhaustive,
    /// `round(ratio × genuine)` imposters per subgroup and fold, capped by availability.
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub imposters: ImposterPolicy,
    pub seed: u64,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self {
            imposters: ImposterPolicy::Ratio(DEFAULT_IMPOSTER_RATIO),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairList {
    pairs: Vec<Pair>,
    fold_of_pair: Vec<usize>,
    num_folds: usize,
}

impl PairList {
    pub fn new(pairs: Vec<Pair>, fold_of_pair: Vec<usize>, num_folds: usize) -> Result<Self> {
        if pairs.len() != fold_of_pair.len() {
            return Err(Error::ShapeMismatch {
                op: "PairList::new",
                expected: format!("{} fold entries", pairs.len()),
                found: fold_of_pair.len().to_string(),
            });
        }
        Ok(Self {
            pairs,
            fold_of_pair,
            num_folds,
        })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn fold_of_pair(&self) -> &[usize] {
        &self.fold_of_pair
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.label.is_genuine()).collect()
    }

    /// Subgroups that own at least one pair, in canonical order.
    pub fn subgroups(&self) -> Vec<SubgroupLabel> {
        let mut v: Vec<SubgroupLabel> = self.pairs.iter().map(|p| p.subgroup).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Indices of the pairs belonging to each subgroup.
    pub fn indices_by_subgroup(&self) -> BTreeMap<SubgroupLabel, Vec<usize>> {
        let mut out: BTreeMap<SubgroupLabel, Vec<usize>> = BTreeMap::new();
        for (n, p) in self.pairs.iter().enumerate() {
            out.entry(p.subgroup).or_default().push(n);
        }
        out
    }

    /// Pairs at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            pairs: indices.iter().map(|&n| self.pairs[n]).collect(),
            fold_of_pair: indices.iter().map(|&n| self.fold_of_pair[n]).collect(),
            num_folds: self.num_folds,
        }
    }

    /// `(genuine, imposter)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let g = self.pairs.iter().filter(|p| p.label.is_genuine()).count();
        (g, self.pairs.len() - g)
    }

    pub fn save<S: Scalar>(&self, set: &EmbeddingSet<S>, path: &Path) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "sample_id_i,sample_id_j,label,subgroup,fold")?;
            let e = set.embeddings();
            for (p, f) in self.pairs.iter().zip(&self.fold_of_pair) {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    e[p.i].sample_id,
                    e[p.j].sample_id,
                    p.label.as_str(),
                    p.subgroup,
                    f
                )?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Reads a pair file for `set`, re-checking every pair invariant.
    pub fn load<S: Scalar>(set: &EmbeddingSet<S>, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let index = set.sample_index();
        let ctx = |n: usize| format!("{}:{}", path.display(), n + 1);
        let mut pairs = Vec::new();
        let mut folds = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end();
            if n == 0 {
                if line != "sample_id_i,sample_id_j,label,subgroup,fold" {
                    return Err(Error::format(
                        ctx(n),
                        "header must be sample_id_i,sample_id_j,label,subgroup,fold",
                    ));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::format(ctx(n), "expected five columns"));
            }
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::format(ctx(n), format!("unknown sample {id}")))
            };
            let (i, j) = (lookup(cols[0])?, lookup(cols[1])?);
            let label = match cols[2] {
                "genuine" => PairLabel::Genuine,
                "imposter" => PairLabel::Imposter,
                other => return Err(Error::format(ctx(n), format!("bad label {other:?}"))),
            };
            let subgroup: SubgroupLabel = cols[3].parse()?;
            let fold: usize = cols[4]
                .parse()
                .map_err(|_| Error::format(ctx(n), format!("bad fold {:?}", cols[4])))?;
            let pair = Pair {
                i,
                j,
                label,
                subgroup,
            };
            check_pair(set, &pair).map_err(|m| Error::format(ctx(n), m))?;
            pairs.push(pair);
            folds.push(fold);
        }
        if pairs.is_empty() {
            return Err(Error::format(path.display().to_string(), "no pairs"));
        }
        let num_folds = folds.iter().max().map_or(1, |m| m + 1);
        Self::new(pairs, folds, num_folds)
    }
}

fn check_pair<S: Scalar>(set: &EmbeddingSet<S>, p: &Pair) -> std::result::Result<(), String> {
    let e = set.embeddings();
    if p.i == p.j {
        return Err("pair joins a sample with itself".into());
    }
    let same = e[p.i].subject_id == e[p.j].subject_id;
    if same != p.label.is_genuine() {
        return Err("label disagrees with subject identity".into());
    }
    if e[p.i].subgroup != p.subgroup || e[p.j].subgroup != p.subgroup {
        return Err("pair crosses subgroups".into());
    }
    Ok(())
}

pub fn build_pairs<S: Scalar>(
    set: &EmbeddingSet<S>,
    folds: &FoldAssignment,
    policy: &PairPolicy,
) -> Result<PairList> {
    if folds.num_subjects() != set.num_identities() {
        return Err(Error::InvalidArgument(format!(
            "fold assignment covers {} subjects, set has {}",
            folds.num_subjects(),
            set.num_identities()
        )));
    }
    if let ImposterPolicy::Ratio(r) = policy.imposters {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!("imposter ratio must be >= 0, got {r}")));
        }
    }

    // (subgroup, fold) -> subject -> samples, all in index order
    let mut cells: BTreeMap<(SubgroupLabel, usize), BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (n, e) in set.embeddings().iter().enumerate() {
        cells
            .entry((e.subgroup, folds.fold_of(e.subject_id)))
            .or_default()
            .entry(e.subject_id)
            .or_default()
            .push(n);
    }
    for label in set.present_subgroups() {
        let subjects: usize = cells
            .iter()
            .filter(|((g, _), _)| *g == label)
            .map(|(_, s)| s.len())
            .sum();
        let any_cell = cells
            .iter()
            .any(|((g, _), s)| *g == label && s.len() >= 2);
        if subjects < 2 || !any_cell {
            return Err(Error::NoImposters(label.code()));
        }
    }

    let mut rng = rng::seeded(policy.seed, Stream::Pairs);
    let mut pairs = Vec::new();
    let mut fold_of_pair = Vec::new();
    for (&(subgroup, fold), subjects) in &cells {
        let mut genuine = Vec::new();
        for samples in subjects.values() {
            for (a, &i) in samples.iter().enumerate() {
                for &j in &samples[a + 1..] {
                    genuine.push((i, j));
                }
            }
        }
        let members: Vec<(usize, usize)> = subjects
            .iter()
            .flat_map(|(&s, v)| v.iter().map(move |&n| (n, s)))
            .collect();
        let mut imposters = Vec::new();
        for (a, &(i, si)) in members.iter().enumerate() {
            for &(j, sj) in &members[a + 1..] {
                if si != sj {
                    imposters.push((i.min(j), i.max(j)));
                }
            }
        }
        if let ImposterPolicy::Ratio(r) = policy.imposters {
            let target = ((r * genuine.len() as f64).round() as usize).min(imposters.len());
            imposters.shuffle(&mut rng);
            imposters.truncate(target);
            imposters.sort_unstable();
        }
        for (i, j, label) in genuine
            .into_iter()
            .map(|(i, j)| (i, j, PairLabel::Genuine))
            .chain(imposters.into_iter().map(|(i, j)| (i, j, PairLabel::Imposter)))
        {
            pairs.push(Pair {
                i,
                j,
                label,
                subgroup,
            });
            fold_of_pair.push(fold);
        }
    }
    PairList::new(pairs, fold_of_pair, folds.num_folds())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Test = pairs of subjects in `fold`; train = everything else.
pub fn pairs_for_fold(list: &PairList, fold: usize, split: Split) -> PairList {
    let keep: Vec<usize> = (0..list.len())
        .filter(|&n| (list.fold_of_pair[n] == fold) == (split == Split::Test))
        .collect();
    list.select(&keep)
}
