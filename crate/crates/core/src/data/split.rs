//! Train/test partitions by subject, by viewpoint, or at random.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, SplitRole};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitProtocol {
    /// Listed subjects go to test.
    BySubject { test_subjects: Vec<u32> },
    /// Listed viewpoint tags go to test.
    ByView { test_views: Vec<String> },
    /// A seeded random `test_fraction` goes to test.
    Random { test_fraction: f64 },
}

/// Index sets of a partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions items described by `(subject, view)` tags.
pub fn split_indices(
    tags: &[(u32, &str)],
    protocol: &SplitProtocol,
    seed: u64,
) -> Result<SplitIndices> {
    let n = tags.len();
    let is_test: Vec<bool> = match protocol {
        SplitProtocol::BySubject { test_subjects } => tags
            .iter()
            .map(|(s, _)| test_subjects.contains(s))
            .collect(),
        SplitProtocol::ByView { test_views } => {
            if let Some(i) = tags.iter().position(|(_, v)| v.is_empty()) {
                return Err(Error::Schema(format!("item {i} has no view tag")));
            }
            tags.iter()
                .map(|(_, v)| test_views.iter().any(|t| t == v))
                .collect()
        }
        SplitProtocol::Random { test_fraction } => {
            if !(0.0..=1.0).contains(test_fraction) {
                return Err(Error::invalid(format!(
                    "test_fraction {test_fraction} outside [0, 1]"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let k = (n as f64 * test_fraction).round() as usize;
            let mut flags = vec![false; n];
            for &i in &order[..k] {
                flags[i] = true;
            }
            flags
        }
    };
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "split leaves {} training and {} test items",
            train.len(),
            test.len()
        )));
    }
    Ok(SplitIndices { train, test })
}

/// Train and test manifests, with entries tagged by their role.
pub fn make_splits(
    manifest: &DatasetManifest,
    protocol: &SplitProtocol,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let tags: Vec<(u32, &str)> = manifest
        .entries
        .iter()
        .map(|e| (e.subject, e.view.as_str()))
        .collect();
    let idx = split_indices(&tags, protocol, seed)?;
    let pick = |ids: &[usize], role| DatasetManifest {
        entries: ids
            .iter()
            .map(|&i| {
                let mut e = manifest.entries[i].clone();
                e.split = Some(role);
                e
            })
            .collect(),
        ..manifest.clone()
    };
    Ok((
        pick(&idx.train, SplitRole::Train),
        pick(&idx.test, SplitRole::Test),
    ))
}

/// Same partition applied to in-memory sequences.
pub fn split_sequences(
    seqs: &[SkeletonSequence],
    protocol: &SplitProtocol,
    seed: u64,
) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    let tags: Vec<(u32, &str)> = seqs.iter().map(|s| (s.subject, s.view.as_str())).collect();
    let idx = split_indices(&tags, protocol, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| seqs[i].clone()).collect();
    Ok((pick(&idx.train), pick(&idx.test)))
}

/// Global coordinate range `(c_min, c_max)` of a training split.
pub fn dataset_stats(train: &[SkeletonSequence]) -> Result<(f64, f64)> {
    if train.is_empty() {
        return Err(Error::invalid(
            "dataset statistics need a nonempty training split",
        ));
    }
    Ok(train
        .iter()
        .map(SkeletonSequence::coord_range)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        }))
}
