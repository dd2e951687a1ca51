use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calendar::keyed_uniform;
use crate::error::{Error, Result};

const STREAM: u64 = 0x5EED_5B17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Test,
}

/// Subject-level assignment; a subject's episodes all follow its id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fraction: f64,
    pub seed: u64,
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    /// Assignment rule, usable for ids not seen at split time.
    pub fn rule(id: &str, fraction: f64, seed: u64) -> Partition {
        if keyed_uniform(seed, id, STREAM) < fraction {
            Partition::Test
        } else {
            Partition::Train
        }
    }

    pub fn get(&self, id: &str) -> Partition {
        self.assignment
            .get(id)
            .copied()
            .unwrap_or_else(|| Self::rule(id, self.fraction, self.seed))
    }

    pub fn test_share(&self) -> f64 {
        let test = self
            .assignment
            .values()
            .filter(|p| **p == Partition::Test)
            .count();
        test as f64 / self.assignment.len().max(1) as f64
    }

    /// Splits items into (train, test) by the id of each item.
    pub fn partition<T: Clone>(&self, items: &[T], id_of: impl Fn(&T) -> &str) -> (Vec<T>, Vec<T>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for it in items {
            match self.get(id_of(it)) {
                Partition::Train => train.push(it.clone()),
                Partition::Test => test.push(it.clone()),
            }
        }
        (train, test)
    }
}

/// Reserves a `fraction` of subjects for testing via a seeded hash of each id.
pub fn split_train_test<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    fraction: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {fraction} outside [0, 1]"
        )));
    }
    let assignment = ids
        .into_iter()
        .map(|id| (id.to_string(), SplitAssignment::rule(id, fraction, seed)))
        .collect();
    Ok(SplitAssignment {
        fraction,
        seed,
        assignment,
    })
}
