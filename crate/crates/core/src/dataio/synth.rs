use super::Dataset;
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, Rng};

/// Isotropic unit-variance Gaussian blobs. Class centres are standard normal
/// vectors scaled by `separation`; rows are interleaved by class
/// (`row i` has label `i mod class_count`).
pub fn synth_blobs(
    class_count: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if class_count == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Parameter(format!(
            "blob counts must be positive (classes {class_count}, per class {per_class}, dim {dim})"
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Parameter(format!(
            "separation must be finite and nonnegative, got {separation}"
        )));
    }
    let centres = Matrix::from_fn(class_count, dim, |_, _| separation * rng.normal());
    let n = class_count * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    let features = Matrix::from_fn(n, dim, |i, j| centres.get(i % class_count, j) + rng.normal());
    Dataset::new(
        format!("blobs-{class_count}x{per_class}-d{dim}"),
        features,
        labels,
        class_count,
    )
}
