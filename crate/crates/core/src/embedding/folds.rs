//! Subject-disjoint, subgroup-stratified folds.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use super::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// Fold index of every dense subject id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    num_folds: usize,
    fold_of_subject: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(num_folds: usize, fold_of_subject: Vec<usize>) -> Result<Self> {
        if num_folds == 0 {
            return Err(Error::InvalidArgument("num_folds must be at least 1".into()));
        }
        if let Some(bad) = fold_of_subject.iter().find(|&&f| f >= num_folds) {
            return Err(Error::InvalidArgument(format!(
                "fold index {bad} out of range for {num_folds} folds"
            )));
        }
        Ok(Self {
            num_folds,
            fold_of_subject,
        })
    }

    /// Every subject in one fold.
    pub fn single(num_subjects: usize) -> Self {
        Self {
            num_folds: 1,
            fold_of_subject: vec![0; num_subjects],
        }
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn num_subjects(&self) -> usize {
        self.fold_of_subject.len()
    }

    pub fn fold_of(&self, subject: usize) -> usize {
        self.fold_of_subject[subject]
    }

    /// Sample indices of `set` whose subject is (or is not) in `fold`.
    pub fn sample_indices<S: Scalar>(
        &self,
        set: &EmbeddingSet<S>,
        fold: usize,
        in_fold: bool,
    ) -> Vec<usize> {
        set.embeddings()
            .iter()
            .enumerate()
            .filter(|(_, e)| (self.fold_of_subject[e.subject_id] == fold) == in_fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks coverage of `set` and that every fold holds every present subgroup.
    pub fn validate<S: Scalar>(&self, set: &EmbeddingSet<S>) -> Result<()> {
        if self.fold_of_subject.len() != set.num_identities() {
            return Err(Error::InvalidArgument(format!(
                "fold assignment covers {} subjects, set has {}",
                self.fold_of_subject.len(),
                set.num_identities()
            )));
        }
        let subgroups = set.subject_subgroups();
        for label in set.present_subgroups() {
            for fold in 0..self.num_folds {
                let any = subgroups
                    .iter()
                    .zip(&self.fold_of_subject)
                    .any(|(&g, &f)| g == label && f == fold);
                if !any {
                    return Err(Error::InvalidArgument(format!(
                        "fold {fold} has no subject from subgroup {label}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `subject_id,fold` rows keyed by the original subject identifiers.
    pub fn save<S: Scalar>(&self, set: &EmbeddingSet<S>, path: &Path) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "subject_id,fold")?;
            for (key, fold) in set.subject_keys().iter().zip(&self.fold_of_subject) {
                writeln!(w, "{key},{fold}")?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Reads a fold file for `set`; the fold count is one more than the largest index.
    pub fn load<S: Scalar>(set: &EmbeddingSet<S>, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let keys: HashMap<String, usize> = set
            .subject_keys()
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        let mut folds = vec![None; set.num_identities()];
        let ctx = |n: usize| format!("{}:{}", path.display(), n + 1);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end();
            if n == 0 {
                if line != "subject_id,fold" {
                    return Err(Error::format(ctx(n), "header must be subject_id,fold"));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (key, fold) = line
                .split_once(',')
                .ok_or_else(|| Error::format(ctx(n), "expected two columns"))?;
            let subject = *keys
                .get(key)
                .ok_or_else(|| Error::format(ctx(n), format!("unknown subject {key}")))?;
            let fold: usize = fold
                .parse()
                .map_err(|_| Error::format(ctx(n), format!("bad fold index {fold:?}")))?;
            folds[subject] = Some(fold);
        }
        let fold_of_subject = folds
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                f.ok_or_else(|| {
                    Error::format(path.display().to_string(), format!("subject #{i} has no fold"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let num_folds = fold_of_subject.iter().max().map_or(1, |m| m + 1);
        Self::new(num_folds, fold_of_subject)
    }
}

/// Stratified subject-level split.
///
/// Within each subgroup the subjects are shuffled and dealt round-robin; the
/// dealing position carries over between subgroups so fold totals stay balanced.
pub fn assign_folds<S: Scalar>(
    set: &EmbeddingSet<S>,
    num_folds: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if num_folds == 0 {
        return Err(Error::InvalidArgument("num_folds must be at least 1".into()));
    }
    let subgroups = set.subject_subgroups();
    let mut rng = rng::seeded(seed, Stream::Folds);
    let mut fold_of_subject = vec![0; set.num_identities()];
    let mut cursor = 0;
    for label in set.present_subgroups() {
        let mut members: Vec<usize> = (0..subgroups.len()).filter(|&s| subgroups[s] == label).collect();
        if members.len() < num_folds {
            return Err(Error::TooFewSubjects {
                subgroup: label.code(),
                have: members.len(),
                need: num_folds,
            });
        }
        members.shuffle(&mut rng);
        for s in members {
            fold_of_subject[s] = cursor % num_folds;
            cursor += 1;
        }
    }
    FoldAssignment::new(num_folds, fold_of_subject)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Provenance, RawEmbedding, SubgroupLabel};

    fn set_with(subjects_per_group: usize, samples: usize) -> EmbeddingSet<f64> {
        let mut rows = Vec::new();
        for label in SubgroupLabel::all() {
            for s in 0..subjects_per_group {
                for n in 0..samples {
                    rows.push(RawEmbedding {
                        sample_id: format!("{label}-{s}-{n}"),
                        subject_key: format!("{label}-{s}"),
                        subgroup: label,
                        vector: vec![1.0],
                    });
                }
            }
        }
        EmbeddingSet::from_raw(rows, None, Provenance::Synthetic).unwrap()
    }

    fn counts(set: &EmbeddingSet<f64>, folds: &FoldAssignment) -> Vec<Vec<usize>> {
        let sg = set.subject_subgroups();
        let mut c = vec![vec![0; 8]; folds.num_folds()];
        for s in 0..set.num_identities() {
            c[folds.fold_of(s)][set.scheme().index_of(sg[s]).unwrap()] += 1;
        }
        c
    }

    #[test]
    fn exact_division_gives_one_subject_per_subgroup_per_fold() {
        let set = set_with(5, 1);
        let folds = assign_folds(&set, 5, 3).unwrap();
        for row in counts(&set, &folds) {
            assert!(row.iter().all(|&c| c == 1));
        }
        folds.validate(&set).unwrap();
    }

    #[test]
    fn full_scale_folds_have_160_subjects() {
        let set = set_with(100, 1);
        let folds = assign_folds(&set, 5, 0).unwrap();
        for row in counts(&set, &folds) {
            assert_eq!(row.iter().sum::<usize>(), 160);
        }
    }

    #[test]
    fn same_seed_same_assignment() {
        let set = set_with(7, 2);
        assert_eq!(assign_folds(&set, 5, 11).unwrap(), assign_folds(&set, 5, 11).unwrap());
        assert_ne!(assign_folds(&set, 5, 11).unwrap(), assign_folds(&set, 5, 12).unwrap());
    }

    #[test]
    fn uneven_counts_stay_within_one() {
        let set = set_with(7, 1);
        let folds = assign_folds(&set, 5, 1).unwrap();
        let c = counts(&set, &folds);
        for k in 0..8 {
            let col: Vec<usize> = c.iter().map(|r| r[k]).collect();
            assert!(col.iter().max().unwrap() - col.iter().min().unwrap() <= 1);
        }
        let totals: Vec<usize> = c.iter().map(|r| r.iter().sum()).collect();
        assert!(totals.iter().max().unwrap() - totals.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        let set = set_with(3, 1);
        assert!(matches!(
            assign_folds(&set, 5, 0),
            Err(Error::TooFewSubjects { have: 3, need: 5, .. })
        ));
    }

    #[test]
    fn fold_file_round_trip() {
        let set = set_with(5, 2);
        let folds = assign_folds(&set, 5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("folds.csv");
        folds.save(&set, &p).unwrap();
        assert_eq!(FoldAssignment::load(&set, &p).unwrap(), folds);
    }
}
