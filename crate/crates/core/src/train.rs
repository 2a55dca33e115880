//! Pieces shared by both training stages.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BatchPlan, Label};
use crate::error::{Error, Result};

/// One labelled, already-encoded training item.
#[derive(Debug, Clone)]
pub struct Example<I> {
    pub id: String,
    pub label: Label,
    pub input: I,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub loss_sum: f64,
    pub loss_mean: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn push(&mut self, row: LogRow) {
        log::debug!(
            "step {} epoch {} loss {:.6} lr {:.3e}",
            row.step,
            row.epoch,
            row.loss_mean,
            row.lr
        );
        self.rows.push(row);
    }

    /// Mean of `loss_mean` per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += r.loss_mean;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| s / n as f64)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(TrainingLog { rows })
    }
}

/// Resolves a plan's ids to example indices.
pub(crate) fn plan_indices<'a>(
    plan: &BatchPlan,
    ids: impl Iterator<Item = &'a str>,
) -> Result<Vec<Vec<usize>>> {
    let index: HashMap<&str, usize> = ids.enumerate().map(|(i, id)| (id, i)).collect();
    plan.batches
        .iter()
        .map(|b| {
            b.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidBatchPlan(format!("unknown id {id}")))
                })
                .collect()
        })
        .collect()
}

/// Distinct per-step seed for dropout masks.
pub(crate) fn step_seed(seed: u64, stage: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stage << 48)
        .wrapping_add(step as u64)
}

/// Fails like a non-finite loss when the encoder output already holds NaN or infinity.
pub(crate) fn check_finite_output<T: crate::Scalar>(
    h: &ndarray::Array2<T>,
    step: usize,
    ids: impl Iterator<Item = String>,
) -> Result<()> {
    let bad = h.iter().any(|v| !v.is_finite());
    check_finite(if bad { f64::NAN } else { 0.0 }, step, ids)
}

pub(crate) fn check_finite(loss: f64, step: usize, ids: impl Iterator<Item = String>) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step,
            batch_ids: ids.collect(),
        })
    }
}

