//! Scoring and selecting unlabeled points.
//!
//! Entropies are in nats. Every strategy returns pool indices (rows of the
//! dataset), never positions within the unlabeled list.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alcore::PoolState;
use crate::error::{Error, Result};
use crate::model::{MlpParams, Mode};
use crate::ndcore::{softmax, squared_distance, Matrix, Rng};
use crate::trainer::CheckpointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mpts,
    Random,
    Entropy,
    Bald,
    Coreset,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mpts,
        Method::Random,
        Method::Entropy,
        Method::Bald,
        Method::Coreset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mpts => "mpts",
            Method::Random => "random",
            Method::Entropy => "entropy",
            Method::Bald => "bald",
            Method::Coreset => "coreset",
        }
    }

    /// Stable small id used to derive per-method RNG streams.
    pub fn id(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub method: Method,
    /// Per-unlabeled-point scores in ascending pool-index order (empty for
    /// random; per-pick max-min distances for coreset).
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
}

/// Element-wise mean of the snapshots' class probabilities.
pub fn avg_predict(trajectory: &CheckpointSet, x: &Matrix) -> Result<Matrix> {
    let snaps = trajectory.snapshots();
    let Some(first) = snaps.first() else {
        return Err(Error::Parameter("empty trajectory".into()));
    };
    if snaps.len() == 1 {
        return first.predict_proba(x);
    }
    let mut acc = first.predict_proba(x)?;
    for s in &snaps[1..] {
        acc.add_assign(&s.predict_proba(x)?)?;
    }
    Ok(acc.scale(1.0 / snaps.len() as f64))
}

fn row_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h.max(0.0)
}

/// `H_i = −Σ_c P[i,c]·ln P[i,c]` with `0·ln 0 = 0`.
pub fn entropy_scores(p: &Matrix) -> Result<Vec<f64>> {
    p.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-6 || row.iter().any(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
                return Err(Error::Contract(format!(
                    "row {i} is not a probability vector (sum {total})"
                )));
            }
            Ok(row_entropy(row))
        })
        .collect()
}

/// Positions of the `k` largest scores, sorted by descending score with ties
/// broken by ascending position. `k` is clamped to the number of scores.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order
}

fn unlabeled_or_err(pool: &PoolState) -> Result<Vec<usize>> {
    let u = pool.unlabeled();
    if u.is_empty() {
        return Err(Error::State("unlabeled pool is empty".into()));
    }
    Ok(u)
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::Parameter("budget must be at least 1".into()));
    }
    Ok(())
}

fn top_k_result(method: Method, unlabeled: &[usize], scores: Vec<f64>, budget: usize) -> AcquisitionResult {
    let selected = select_top_k(&scores, budget)
        .into_iter()
        .map(|k| unlabeled[k])
        .collect();
    AcquisitionResult {
        method,
        scores,
        selected,
    }
}

/// Entropy of the trajectory-averaged prediction, top-`budget`.
pub fn mpts_acquire(
    trajectory: &CheckpointSet,
    pool: &PoolState,
    budget: usize,
) -> Result<AcquisitionResult> {
    check_budget(budget)?;
    let u = unlabeled_or_err(pool)?;
    let scores = entropy_scores(&avg_predict(trajectory, &pool.rows(&u))?)?;
    Ok(top_k_result(Method::Mpts, &u, scores, budget))
}

pub fn entropy_acquire(
    params: &MlpParams,
    pool: &PoolState,
    budget: usize,
) -> Result<AcquisitionResult> {
    check_budget(budget)?;
    let u = unlabeled_or_err(pool)?;
    let scores = entropy_scores(&params.predict_proba(&pool.rows(&u))?)?;
    Ok(top_k_result(Method::Entropy, &u, scores, budget))
}

/// Uniform sample without replacement from 𝓤.
pub fn random_acquire(pool: &PoolState, budget: usize, rng: &mut Rng) -> Result<AcquisitionResult> {
    check_budget(budget)?;
    let u = unlabeled_or_err(pool)?;
    let selected = rng
        .sample_distinct(u.len(), budget.min(u.len()))
        .into_iter()
        .map(|k| u[k])
        .collect();
    Ok(AcquisitionResult {
        method: Method::Random,
        scores: Vec::new(),
        selected,
    })
}

/// Mutual information from per-pass probability matrices:
/// `H(mean_t P_t) − mean_t H(P_t)`, per row.
pub fn bald_scores(passes: &[Matrix]) -> Result<Vec<f64>> {
    let Some(first) = passes.first() else {
        return Err(Error::Parameter("BALD needs at least one pass".into()));
    };
    let t = passes.len() as f64;
    let (n, c) = first.shape();
    let mut scores = Vec::with_capacity(n);
    let mut mean = vec![0.0; c];
    for i in 0..n {
        mean.iter_mut().for_each(|v| *v = 0.0);
        let mut mean_h = 0.0;
        for p in passes {
            let row = p.row(i);
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            mean_h += row_entropy(row);
        }
        mean.iter_mut().for_each(|v| *v /= t);
        scores.push(row_entropy(&mean) - mean_h / t);
    }
    Ok(scores)
}

/// BALD with `passes` stochastic (dropout) forward passes over 𝓤.
pub fn bald_acquire(
    params: &MlpParams,
    pool: &PoolState,
    budget: usize,
    passes: usize,
    rng: &mut Rng,
) -> Result<AcquisitionResult> {
    check_budget(budget)?;
    if params.dropout_rate() <= 0.0 {
        return Err(Error::Parameter(
            "BALD requires a network with a positive dropout rate".into(),
        ));
    }
    if passes < 2 {
        return Err(Error::Parameter(format!(
            "BALD needs at least 2 stochastic passes, got {passes}"
        )));
    }
    let u = unlabeled_or_err(pool)?;
    let x = pool.rows(&u);
    let probs = (0..passes)
        .map(|_| {
            let out = params.forward(&x, Mode::Train(rng))?;
            Ok(softmax(out.logits.as_ref().expect("full pass")))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = bald_scores(&probs)?;
    Ok(top_k_result(Method::Bald, &u, scores, budget))
}

/// Greedy k-centre selection on a precomputed feature matrix, where rows are
/// indexed by pool index. Each pick maximises the minimum distance to the
/// labeled points and earlier picks; ties go to the lowest pool index.
pub fn k_center_greedy(
    features: &Matrix,
    labeled: &[usize],
    unlabeled: &[usize],
    budget: usize,
) -> (Vec<usize>, Vec<f64>) {
    let mut min_d2: Vec<f64> = unlabeled
        .iter()
        .map(|&u| {
            labeled
                .iter()
                .map(|&l| squared_distance(features.row(u), features.row(l)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; unlabeled.len()];
    let mut picks = Vec::new();
    let mut dists = Vec::new();
    for _ in 0..budget.min(unlabeled.len()) {
        let mut best: Option<usize> = None;
        for k in 0..unlabeled.len() {
            if taken[k] {
                continue;
            }
            // unlabeled is ascending, so strict > keeps the lowest index on ties
            if best.is_none_or(|b| min_d2[k] > min_d2[b]) {
                best = Some(k);
            }
        }
        let b = best.expect("budget bounded by unlabeled count");
        taken[b] = true;
        picks.push(unlabeled[b]);
        dists.push(min_d2[b].sqrt());
        let centre = features.row(unlabeled[b]);
        for k in 0..unlabeled.len() {
            if !taken[k] {
                let d2 = squared_distance(features.row(unlabeled[k]), centre);
                if d2 < min_d2[k] {
                    min_d2[k] = d2;
                }
            }
        }
    }
    (picks, dists)
}

/// k-centre greedy in the final model's feature space.
pub fn coreset_acquire(
    params: &MlpParams,
    pool: &PoolState,
    budget: usize,
) -> Result<AcquisitionResult> {
    check_budget(budget)?;
    let u = unlabeled_or_err(pool)?;
    let features = params.features(pool.features())?;
    let (selected, scores) = k_center_greedy(&features, pool.labeled(), &u, budget);
    Ok(AcquisitionResult {
        method: Method::Coreset,
        scores,
        selected,
    })
}
