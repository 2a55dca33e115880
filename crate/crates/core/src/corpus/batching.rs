use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, SampleSet};
use crate::error::{Error, Result};

/// One epoch's worth of batches, as lists of sample ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Class-balanced batches for contrastive training.
///
/// Each class is shuffled independently, then batches take `batch_size / 2`
/// ids from each. The epoch ends when the smaller class runs out; the
/// incomplete tail is dropped, so the plan has exactly
/// `floor(2 * min(n0, n1) / batch_size)` batches.
pub fn balanced_batches(set: &SampleSet, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    balanced_plan(set.iter().map(|s| (s.id.as_str(), s.label)), batch_size, seed)
}

/// [`balanced_batches`] over arbitrary `(id, label)` pairs.
pub fn balanced_plan<'a>(
    items: impl IntoIterator<Item = (&'a str, Label)>,
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size < 4 || batch_size % 2 != 0 {
        return Err(Error::InvalidBatchPlan(format!(
            "contrastive batch size must be even and >= 4, got {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); Label::ALL.len()];
    for (id, label) in items {
        by_class[label.index()].push(id.to_string());
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::InvalidBatchPlan(
            "balanced batching needs both labels present".into(),
        ));
    }
    for ids in &mut by_class {
        ids.shuffle(&mut rng);
    }
    let half = batch_size / 2;
    let n_batches = by_class.iter().map(Vec::len).min().unwrap_or(0) / half;
    let batches = (0..n_batches)
        .map(|b| {
            let mut batch: Vec<String> = by_class
                .iter()
                .flat_map(|ids| ids[b * half..(b + 1) * half].iter().cloned())
                .collect();
            batch.shuffle(&mut rng);
            batch
        })
        .collect();
    Ok(BatchPlan {
        batches,
        batch_size,
        seed,
    })
}

/// Plain shuffled batches for classification training; the last batch may
/// be short.
pub fn shuffled_batches(set: &SampleSet, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    shuffled_plan(set.iter().map(|s| s.id.as_str()), batch_size, seed)
}

pub fn shuffled_plan<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::InvalidBatchPlan("batch size must be positive".into()));
    }
    let mut ids: Vec<String> = ids.into_iter().map(str::to_string).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BatchPlan {
        batches: ids.chunks(batch_size).map(<[String]>::to_vec).collect(),
        batch_size,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::{CodeSample, DatasetKind, Language, Provenance, Split};

    pub(crate) fn synthetic(n_human: usize, n_ai: usize) -> SampleSet {
        let samples = (0..n_human + n_ai)
            .map(|i| CodeSample {
                id: format!("s{i}"),
                source: format!("int v{i};"),
                language: Language::Java,
                label: if i < n_human { Label::Human } else { Label::Ai },
                split: Split::Train,
                dataset: DatasetKind::GptSniffer,
            })
            .collect();
        SampleSet::new(
            samples,
            Provenance {
                dataset: DatasetKind::GptSniffer,
                version: "synthetic".into(),
            },
        )
        .unwrap()
    }

    fn label_of(set: &SampleSet, id: &str) -> Label {
        set.get(id).unwrap().label
    }

    #[test]
    fn paper_sized_train_split() {
        let set = synthetic(600, 600);
        let plan = balanced_batches(&set, 32, 7).unwrap();
        assert_eq!(plan.len(), 37);
        for batch in &plan.batches {
            assert_eq!(batch.len(), 32);
            let ai = batch.iter().filter(|id| label_of(&set, id) == Label::Ai).count();
            assert_eq!(ai, 16);
        }
    }

    #[test]
    fn four_samples_one_batch() {
        let set = synthetic(2, 2);
        let plan = balanced_batches(&set, 4, 0).unwrap();
        assert_eq!(plan.len(), 1);
        let ids: HashSet<_> = plan.batches[0].iter().cloned().collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn deterministic_per_seed() {
        let set = synthetic(40, 25);
        assert_eq!(
            balanced_batches(&set, 8, 3).unwrap(),
            balanced_batches(&set, 8, 3).unwrap()
        );
        assert_ne!(
            balanced_batches(&set, 8, 3).unwrap(),
            balanced_batches(&set, 8, 4).unwrap()
        );
    }

    #[test]
    fn rejects_bad_sizes_and_single_class() {
        let set = synthetic(8, 8);
        assert!(balanced_batches(&set, 5, 0).is_err());
        assert!(balanced_batches(&set, 2, 0).is_err());
        assert!(balanced_batches(&synthetic(8, 0), 4, 0).is_err());
    }

    #[test]
    fn shuffled_keeps_tail() {
        let set = synthetic(5, 5);
        let plan = shuffled_batches(&set, 4, 1).unwrap();
        assert_eq!(
            plan.batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
    }
}
