use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test-fold index of every video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, video_id: &str) -> Option<usize> {
        self.folds.get(video_id).copied()
    }

    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified fold assignment keyed on class label.
///
/// Videos of each class (classes in label order, videos sorted by id) are
/// shuffled with a generator seeded by `seed`, then dealt round-robin. The
/// dealing position carries over from one class to the next, so leftover
/// videos spread across folds instead of piling onto fold 0.
pub fn make_folds(videos: &[(String, String)], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_folds > videos.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_folds} folds requested for {} videos",
            videos.len()
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, class) in videos {
        by_class.entry(class.as_str()).or_default().push(id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut cursor = 0usize;
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            if folds.insert(id.to_string(), cursor % n_folds).is_some() {
                return Err(Error::InvalidRecord(format!("duplicate video id `{id}`")));
            }
            cursor += 1;
        }
    }
    Ok(FoldAssignment { n_folds, folds })
}
