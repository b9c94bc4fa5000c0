//! Pool bookkeeping, evaluation and the multi-round active-learning loop.

mod experiment;
mod pool;

pub use self::experiment::{
    load_base_dataset, prepare_repeat, repeat_seed, round_seed, run_experiment, run_cell, RoundLog,
    RunOptions,
};
pub use self::pool::{init_pool, PoolState, TestSplit};

use crate::acquisition::avg_predict;
use crate::error::{Error, Result};
use crate::model::MlpParams;
use crate::ndcore::Matrix;
use crate::trainer::CheckpointSet;

/// What produces test-time class probabilities.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Single(&'a MlpParams),
    /// Mean prediction over the snapshots.
    Trajectory(&'a CheckpointSet),
}

impl Predictor<'_> {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Predictor::Single(p) => p.predict_proba(x),
            Predictor::Trajectory(t) => avg_predict(t, x),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "accuracy",
            left: probs.shape(),
            right: (labels.len(), 1),
        });
    }
    if labels.is_empty() {
        return Err(Error::State("empty test set".into()));
    }
    let hits = probs
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Test-set accuracy of `predictor` on the pool's held-out rows.
pub fn evaluate(predictor: Predictor<'_>, pool: &PoolState) -> Result<f64> {
    let test = pool.test();
    if test.is_empty() {
        return Err(Error::State("empty test set".into()));
    }
    accuracy(&predictor.predict_proba(&pool.rows(test))?, &pool.labels_of(test))
}
