//! Per-layer forward and backward kernels with hand-derived gradients.

use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// `X·W + b`; each entry is `Σ_k X[i,k]·W[k,j]` (ascending k) plus `b[j]`.
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::Dimension {
            op: "affine_forward",
            left: x.shape(),
            right: w.shape(),
        });
    }
    if b.len() != w.cols() {
        return Err(Error::Dimension {
            op: "affine_forward bias",
            left: w.shape(),
            right: (1, b.len()),
        });
    }
    let mut out = x.matmul(w)?;
    for i in 0..out.rows() {
        for (o, bj) in out.row_mut(i).iter_mut().zip(b) {
            *o += bj;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

pub fn affine_backward(x: &Matrix, w: &Matrix, dy: &Matrix) -> Result<AffineGrads> {
    if x.cols() != w.rows() || dy.rows() != x.rows() || dy.cols() != w.cols() {
        return Err(Error::Dimension {
            op: "affine_backward",
            left: x.shape(),
            right: dy.shape(),
        });
    }
    Ok(AffineGrads {
        dx: dy.matmul_transposed(w)?,
        dw: x.transposed_matmul(dy)?,
        db: column_sums(dy),
    })
}

pub fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (s, v) in sums.iter_mut().zip(r) {
            *s += v;
        }
    }
    sums
}

/// Remembers which inputs were strictly positive.
#[derive(Debug, Clone)]
pub struct ReluMask {
    rows: usize,
    cols: usize,
    active: Vec<bool>,
}

impl ReluMask {
    /// Routes `dy` through the positive entries; the derivative at exactly 0 is 0.
    pub fn backward(&self, dy: &Matrix) -> Result<Matrix> {
        if dy.shape() != (self.rows, self.cols) {
            return Err(Error::Dimension {
                op: "relu_backward",
                left: (self.rows, self.cols),
                right: dy.shape(),
            });
        }
        let data = dy
            .as_slice()
            .iter()
            .zip(&self.active)
            .map(|(&g, &on)| if on { g } else { 0.0 })
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }
}

pub fn relu(x: &Matrix) -> (Matrix, ReluMask) {
    let active: Vec<bool> = x.as_slice().iter().map(|&v| v > 0.0).collect();
    let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
    let (rows, cols) = x.shape();
    (y, ReluMask { rows, cols, active })
}

/// Row-wise softmax using the max-shifted (log-sum-exp) form.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for i in 0..probs.rows() {
        softmax_in_place(probs.row_mut(i));
    }
    probs
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Matrix,
    /// Gradient of `loss` with respect to the logits: `(probs − onehot)/n`.
    pub dlogits: Matrix,
}

pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<CrossEntropy> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if n == 0 {
        return Err(Error::Parameter("cross-entropy needs at least one row".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index {
            index: bad,
            bound: c,
        });
    }
    let mut probs = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &v in z {
            total += (v - max).exp();
        }
        let log_norm = max + total.ln();
        loss += log_norm - z[y];
        let p = probs.row_mut(i);
        for (pj, &zj) in p.iter_mut().zip(z) {
            *pj = (zj - max).exp() / total;
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut dlogits = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let r = dlogits.row_mut(i);
        r[y] -= 1.0;
        for v in r.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok(CrossEntropy {
        loss: loss * inv_n,
        probs,
        dlogits,
    })
}

/// Inverted-dropout mask: kept entries carry `1/(1−rate)`, dropped entries 0.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    rows: usize,
    cols: usize,
    scale: Vec<f64>,
}

impl DropoutMask {
    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.shape() != (self.rows, self.cols) {
            return Err(Error::Dimension {
                op: "dropout",
                left: (self.rows, self.cols),
                right: x.shape(),
            });
        }
        let data = x
            .as_slice()
            .iter()
            .zip(&self.scale)
            .map(|(v, s)| v * s)
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn backward(&self, dy: &Matrix) -> Result<Matrix> {
        self.apply(dy)
    }
}

/// Applies inverted dropout. Returns no mask (identity) in eval mode or at
/// rate 0; the RNG is consumed only when a mask is drawn.
pub fn dropout(
    x: &Matrix,
    rate: f64,
    rng: &mut Rng,
    train_mode: bool,
) -> Result<(Matrix, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !train_mode || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 - rate;
    let inv = 1.0 / keep;
    let scale = (0..x.as_slice().len())
        .map(|_| if rng.uniform() < keep { inv } else { 0.0 })
        .collect();
    let mask = DropoutMask {
        rows: x.rows(),
        cols: x.cols(),
        scale,
    };
    Ok((mask.apply(x)?, Some(mask)))
}
