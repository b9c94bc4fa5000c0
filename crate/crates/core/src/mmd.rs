//! RBF kernels and the biased (V-statistic) MMD² estimator.
//!
//! Kernel convention, used everywhere in the crate:
//! `κ_σ(a, b) = exp(−‖a − b‖² / (2σ²))`. With several bandwidths the kernel
//! is the mean of the per-bandwidth kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Parameter("kernel needs at least one bandwidth".into()));
        }
        if let Some(bad) = bandwidths.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Parameter(format!(
                "bandwidths must be finite and positive, got {bad}"
            )));
        }
        Ok(KernelSpec { bandwidths })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma])
    }

    /// `{σ/2, σ, 2σ}`.
    pub fn multi_scale(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma / 2.0, sigma, 2.0 * sigma])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    #[inline]
    fn eval_sq(&self, d2: f64) -> f64 {
        let mut s = 0.0;
        for &sigma in &self.bandwidths {
            s += (-d2 / (2.0 * sigma * sigma)).exp();
        }
        s / self.bandwidths.len() as f64
    }

    /// Value of `−∂κ/∂a` divided by `(a − b)`, i.e. the mean of `κ_σ/σ²`.
    #[inline]
    fn grad_weight_sq(&self, d2: f64) -> f64 {
        let mut s = 0.0;
        for &sigma in &self.bandwidths {
            let s2 = sigma * sigma;
            s += (-d2 / (2.0 * s2)).exp() / s2;
        }
        s / self.bandwidths.len() as f64
    }
}

fn check_dims(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn check_nonempty(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Parameter(format!(
            "MMD needs nonempty batches, got {} and {} rows",
            a.rows(),
            b.rows()
        )));
    }
    Ok(())
}

pub fn rbf_kernel(a: &Matrix, b: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    check_dims("rbf_kernel", a, b)?;
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        spec.eval_sq(squared_distance(a.row(i), b.row(j)))
    }))
}

fn kernel_mean(a: &Matrix, b: &Matrix, spec: &KernelSpec) -> f64 {
    let mut s = 0.0;
    for x in a.row_iter() {
        for y in b.row_iter() {
            s += spec.eval_sq(squared_distance(x, y));
        }
    }
    s / (a.rows() * b.rows()) as f64
}

/// Biased MMD²: `mean(K_LL) − 2·mean(K_LS) + mean(K_SS)`, diagonals included.
pub fn mmd2_biased(z_l: &Matrix, z_star: &Matrix, spec: &KernelSpec) -> Result<f64> {
    check_dims("mmd2_biased", z_l, z_star)?;
    check_nonempty(z_l, z_star)?;
    Ok(kernel_mean(z_l, z_l, spec) - 2.0 * kernel_mean(z_l, z_star, spec)
        + kernel_mean(z_star, z_star, spec))
}

/// Gradients of [`mmd2_biased`] with respect to every entry of both batches.
pub fn mmd2_grad(z_l: &Matrix, z_star: &Matrix, spec: &KernelSpec) -> Result<(Matrix, Matrix)> {
    check_dims("mmd2_grad", z_l, z_star)?;
    check_nonempty(z_l, z_star)?;
    let (a, b) = (z_l.rows() as f64, z_star.rows() as f64);
    let mut d_l = Matrix::zeros(z_l.rows(), z_l.cols());
    let mut d_s = Matrix::zeros(z_star.rows(), z_star.cols());

    // within-batch terms: d/dx_p of (1/n²) Σ_ij κ(x_i, x_j) = −(2/n²) Σ_j w_pj (x_p − x_j)
    accumulate_pull(z_l, z_l, spec, -2.0 / (a * a), &mut d_l);
    accumulate_pull(z_star, z_star, spec, -2.0 / (b * b), &mut d_s);
    // cross term −(2/ab) Σ κ(x_i, y_j) contributes to both sides
    accumulate_pull(z_l, z_star, spec, 2.0 / (a * b), &mut d_l);
    accumulate_pull(z_star, z_l, spec, 2.0 / (a * b), &mut d_s);
    Ok((d_l, d_s))
}

/// `out[p] += coef · Σ_j w(‖x_p − y_j‖²)·(x_p − y_j)`.
fn accumulate_pull(x: &Matrix, y: &Matrix, spec: &KernelSpec, coef: f64, out: &mut Matrix) {
    let d = x.cols();
    let mut acc = vec![0.0; d];
    for p in 0..x.rows() {
        let xp = x.row(p);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for yj in y.row_iter() {
            let w = spec.grad_weight_sq(squared_distance(xp, yj));
            for k in 0..d {
                acc[k] += w * (xp[k] - yj[k]);
            }
        }
        for (o, v) in out.row_mut(p).iter_mut().zip(&acc) {
            *o += coef * v;
        }
    }
}

/// Median of all pairwise Euclidean distances between rows. Falls back to 1
/// when there are fewer than two rows or the median is zero (which covers the
/// all-identical case). With an even number of pairs the two middle values
/// are averaged.
pub fn median_heuristic(z: &Matrix) -> f64 {
    let n = z.rows();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(squared_distance(z.row(i), z.row(j)).sqrt());
        }
    }
    let m = dists.len();
    dists.sort_by(f64::total_cmp);
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}
