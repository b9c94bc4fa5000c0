use std::collections::BTreeSet;
use std::sync::Arc;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Labeled,
    Unlabeled,
    Test,
}

/// How the held-out evaluation rows are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestSplit {
    /// Use the dataset's own test rows (e.g. the MNIST 10k set).
    Designated,
    /// Hold out this fraction of rows, drawn uniformly.
    Fraction(f64),
}

/// A dataset partitioned into labeled, unlabeled and test indices.
///
/// `labeled` keeps acquisition order; `unlabeled` and `test` are ascending.
#[derive(Debug, Clone)]
pub struct PoolState {
    dataset: Arc<Dataset>,
    labeled: Vec<usize>,
    unlabeled: BTreeSet<usize>,
    test: Vec<usize>,
    slots: Vec<Slot>,
}

impl PoolState {
    /// Builds a partition directly. The three sets must be disjoint and cover
    /// every row.
    pub fn from_parts(
        dataset: Arc<Dataset>,
        labeled: Vec<usize>,
        unlabeled: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = dataset.len();
        let mut slots: Vec<Option<Slot>> = vec![None; n];
        for (set, slot) in [
            (&labeled, Slot::Labeled),
            (&unlabeled, Slot::Unlabeled),
            (&test, Slot::Test),
        ] {
            for &i in set {
                match slots.get_mut(i) {
                    None => return Err(Error::Index { index: i, bound: n }),
                    Some(Some(_)) => {
                        return Err(Error::State(format!("index {i} assigned twice")))
                    }
                    Some(s) => *s = Some(slot),
                }
            }
        }
        let slots = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::State(format!("index {i} not assigned"))))
            .collect::<Result<Vec<_>>>()?;
        let mut test = test;
        test.sort_unstable();
        Ok(PoolState {
            dataset,
            labeled,
            unlabeled: unlabeled.into_iter().collect(),
            test,
            slots,
        })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn features(&self) -> &Matrix {
        &self.dataset.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.dataset.labels
    }

    pub fn class_count(&self) -> usize {
        self.dataset.class_count
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn is_unlabeled(&self, i: usize) -> bool {
        self.slots.get(i) == Some(&Slot::Unlabeled)
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// 𝓛 ∪ 𝓤 in ascending index order.
    pub fn pool_indices(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&i| self.slots[i] != Slot::Test)
            .collect()
    }

    pub fn rows(&self, indices: &[usize]) -> Matrix {
        self.dataset.features.select_rows(indices)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.dataset.labels[i]).collect()
    }

    /// Moves `indices` from 𝓤 to 𝓛, appending in the given order. Either all
    /// indices move or none do.
    pub fn label_points(&mut self, indices: &[usize]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in indices {
            if !self.is_unlabeled(i) {
                return Err(Error::State(format!("index {i} is not unlabeled")));
            }
            if !seen.insert(i) {
                return Err(Error::State(format!("index {i} listed twice")));
            }
        }
        for &i in indices {
            self.unlabeled.remove(&i);
            self.slots[i] = Slot::Labeled;
            self.labeled.push(i);
        }
        Ok(())
    }

    /// Re-derives the partition from scratch and compares; used by tests.
    pub fn check_invariants(&self) -> Result<()> {
        let rebuilt = PoolState::from_parts(
            self.dataset.clone(),
            self.labeled.clone(),
            self.unlabeled(),
            self.test.clone(),
        )?;
        if rebuilt.slots != self.slots {
            return Err(Error::State("slot table out of sync".into()));
        }
        Ok(())
    }
}

/// Draws the test split and a uniform (unstratified) initial labeled set.
///
/// With `restrict_classes`, the initial labeled set is drawn only from rows
/// whose label is in the list; this builds a deliberately biased start.
pub fn init_pool(
    dataset: Arc<Dataset>,
    initial_count: usize,
    split: TestSplit,
    restrict_classes: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<PoolState> {
    let n = dataset.len();
    let test: Vec<usize> = match split {
        TestSplit::Designated => dataset.designated_test.clone().ok_or_else(|| {
            Error::Parameter(format!("dataset `{}` has no designated test split", dataset.name))
        })?,
        TestSplit::Fraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Parameter(format!(
                    "test fraction must lie in [0, 1), got {f}"
                )));
            }
            let k = (f * n as f64).round() as usize;
            rng.sample_distinct(n, k)
        }
    };
    let mut is_test = vec![false; n];
    for &t in &test {
        is_test[t] = true;
    }
    let candidates: Vec<usize> = (0..n)
        .filter(|&i| !is_test[i])
        .filter(|&i| restrict_classes.is_none_or(|cs| cs.contains(&dataset.labels[i])))
        .collect();
    if initial_count > candidates.len() {
        return Err(Error::Parameter(format!(
            "initial_count {initial_count} exceeds the {} eligible pool rows",
            candidates.len()
        )));
    }
    let labeled: Vec<usize> = rng
        .sample_distinct(candidates.len(), initial_count)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    let mut is_labeled = vec![false; n];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..n).filter(|&i| !is_test[i] && !is_labeled[i]).collect();
    PoolState::from_parts(dataset, labeled, unlabeled, test)
}
