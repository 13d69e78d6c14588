use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SentenceRecord;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::config(format!(
                "split ratios must be non-negative, got {parts:?}"
            )));
        }
        if self.train <= 0.0 {
            return Err(Error::config("train ratio must be positive"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Disjoint sentence-id sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
    pub split_seed: u64,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Assign whole article pairs (all SL and EL sentences sharing an article
/// id) to train/validation/test by a seeded shuffle.
pub fn split(records: &[SentenceRecord], ratios: SplitRatios, seed: u64) -> Result<CorpusSplit> {
    ratios.validate()?;
    let articles: BTreeSet<u64> = records.iter().map(|r| r.article_id).collect();
    let mut order: Vec<u64> = articles.into_iter().collect();
    order.shuffle(&mut rng::stream(seed, &[0x73706c6974]));

    let n = order.len();
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_val = ((ratios.validation * n as f64).round() as usize).min(n - n_train);
    let assignment: BTreeMap<u64, usize> = order
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let part = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            (a, part)
        })
        .collect();

    let mut parts: [Vec<u32>; 3] = Default::default();
    for r in records {
        parts[assignment[&r.article_id]].push(r.id);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, validation, test] = parts;
    Ok(CorpusSplit {
        train,
        validation,
        test,
        split_seed: seed,
    })
}
