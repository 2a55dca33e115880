use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DatasetKind, Label, SampleSet, Split};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub human: usize,
    pub ai: usize,
    pub total: usize,
}

impl ClassCounts {
    pub const fn new(human: usize, ai: usize) -> Self {
        ClassCounts {
            human,
            ai,
            total: human + ai,
        }
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Human => self.human,
            Label::Ai => self.ai,
        }
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "human {} / ai {} / total {}", self.human, self.ai, self.total)
    }
}

/// Per-split, per-label counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub splits: BTreeMap<Split, ClassCounts>,
}

impl Stats {
    pub fn split(&self, split: Split) -> ClassCounts {
        self.splits.get(&split).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsWarning {
    pub split: Split,
    pub expected: ClassCounts,
    pub observed: ClassCounts,
}

impl fmt::Display for StatsWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} split: expected {}, observed {}",
            self.split.as_str(),
            self.expected,
            self.observed
        )
    }
}

/// Official split sizes of the benchmark datasets.
pub fn reference_counts(kind: DatasetKind, split: Split) -> Option<ClassCounts> {
    match (kind, split) {
        (DatasetKind::GptSniffer, Split::Train) => Some(ClassCounts::new(600, 600)),
        (DatasetKind::GptSniffer, Split::Test) => Some(ClassCounts::new(131, 142)),
        (DatasetKind::Whodunit, Split::Train) => Some(ClassCounts::new(639, 639)),
        (DatasetKind::Whodunit, Split::Test) => Some(ClassCounts::new(159, 159)),
        (DatasetKind::Augmentation, _) => None,
    }
}

/// Counts samples per split and label. Deviations from the official split
/// sizes are logged and returned, never raised as errors.
pub fn verify_stats(set: &SampleSet) -> (Stats, Vec<StatsWarning>) {
    let mut stats = Stats::default();
    for s in set.iter() {
        let c = stats.splits.entry(s.split).or_default();
        match s.label {
            Label::Human => c.human += 1,
            Label::Ai => c.ai += 1,
        }
        c.total += 1;
    }
    let mut warnings = Vec::new();
    for split in [Split::Train, Split::Test] {
        let observed = stats.split(split);
        if observed.total == 0 {
            continue;
        }
        if let Some(expected) = reference_counts(set.provenance.dataset, split) {
            if expected != observed {
                let w = StatsWarning {
                    split,
                    expected,
                    observed,
                };
                log::warn!("{}: {w}", set.provenance.dataset);
                warnings.push(w);
            }
        }
    }
    (stats, warnings)
}
