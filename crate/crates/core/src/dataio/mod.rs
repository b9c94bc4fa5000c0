//! Dataset ingestion and preparation.

mod csv;
mod idx;
mod synth;

pub use self::csv::{load_csv, parse_csv, LabelColumn, LabelMap};
pub use self::idx::{
    encode_idx_images, encode_idx_labels, idx_to_dataset, load_mnist_dir, load_mnist_idx, parse_idx_images,
    parse_idx_labels, IdxImages, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use self::synth::synth_blobs;

use crate::error::{Error, Result};
use crate::ndcore::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Rows reserved as the test split by the data source, if any.
    pub designated_test: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            features,
            labels,
            class_count,
            designated_test: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_designated_test(mut self, test: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = test.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Index {
                index: bad,
                bound: self.len(),
            });
        }
        self.designated_test = Some(test);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Parameter(format!("dataset `{}` is empty", self.name)));
        }
        if self.labels.len() != self.features.rows() {
            return Err(Error::Dimension {
                op: "dataset",
                left: self.features.shape(),
                right: (self.labels.len(), 1),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::Index {
                index: bad,
                bound: self.class_count,
            });
        }
        if !self.features.is_finite() {
            return Err(Error::Parameter(format!(
                "dataset `{}` has non-finite features",
                self.name
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Restricts to `rows` (in that order). A designated test split is carried
    /// over for the rows it still covers.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let designated_test = self.designated_test.as_ref().map(|test| {
            let mut is_test = vec![false; self.len()];
            for &t in test {
                is_test[t] = true;
            }
            rows.iter()
                .enumerate()
                .filter(|(_, &r)| is_test[r])
                .map(|(pos, _)| pos)
                .collect()
        });
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
            designated_test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub dataset: Dataset,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-feature `(x − mean)/std` with statistics taken over `stat_rows` and
/// applied to every row. Uses the population standard deviation (divide by
/// n). Features whose deviation is zero (relative to their scale) are left
/// untouched, neither centred nor scaled.
pub fn standardize(dataset: &Dataset, stat_rows: &[usize]) -> Result<Standardized> {
    if stat_rows.is_empty() {
        return Err(Error::Parameter("standardisation needs at least one row".into()));
    }
    let d = dataset.dim();
    let n = stat_rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in stat_rows {
        for (m, v) in mean.iter_mut().zip(dataset.features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &r in stat_rows {
        for ((s, v), m) in var.iter_mut().zip(dataset.features.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let mut features = dataset.features.clone();
    for i in 0..features.rows() {
        for ((v, m), s) in features.row_mut(i).iter_mut().zip(&mean).zip(&std) {
            if !is_degenerate(*s, *m) {
                *v = (*v - m) / s;
            }
        }
    }
    Ok(Standardized {
        dataset: Dataset {
            features,
            ..dataset.clone()
        },
        mean,
        std,
    })
}

fn is_degenerate(std: f64, mean: f64) -> bool {
    std <= 1e-12 * mean.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Rng;

    #[test]
    fn standardize_hand_fixture() {
        let ds = Dataset::new("t", Matrix::from_rows(&[[0.0], [2.0]]), vec![0, 0], 1).unwrap();
        let s = standardize(&ds, &[0, 1]).unwrap();
        assert_eq!(s.dataset.features, Matrix::from_rows(&[[-1.0], [1.0]]));
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn standardize_constant_feature_unchanged() {
        let ds = Dataset::new(
            "t",
            Matrix::from_rows(&[[3.0, 1.0], [3.0, 2.0], [3.0, 6.0]]),
            vec![0, 0, 0],
            1,
        )
        .unwrap();
        let s = standardize(&ds, &[0, 1, 2]).unwrap();
        for i in 0..3 {
            assert_eq!(s.dataset.features.get(i, 0), 3.0);
        }
    }

    #[test]
    fn standardize_is_idempotent_on_normalised_data() {
        let mut rng = Rng::seed_from(3);
        let x = Matrix::from_fn(200, 4, |_, j| rng.normal() * (j + 1) as f64 + j as f64);
        let ds = Dataset::new("t", x, vec![0; 200], 1).unwrap();
        let rows: Vec<usize> = (0..200).collect();
        let once = standardize(&ds, &rows).unwrap().dataset;
        let twice = standardize(&once, &rows).unwrap();
        for j in 0..4 {
            assert!(twice.mean[j].abs() <= 1e-12);
            assert!((twice.std[j] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn standardize_uses_only_stat_rows() {
        let ds = Dataset::new("t", Matrix::from_rows(&[[0.0], [2.0], [100.0]]), vec![0; 3], 1)
            .unwrap();
        let s = standardize(&ds, &[0, 1]).unwrap();
        assert_eq!(s.dataset.features.get(2, 0), 99.0);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new("t", Matrix::zeros(2, 1), vec![0, 2], 2).is_err());
        assert!(Dataset::new("t", Matrix::zeros(2, 1), vec![0], 2).is_err());
        assert!(Dataset::new("t", Matrix::zeros(0, 1), vec![], 2).is_err());
        assert!(Dataset::new("t", Matrix::filled(1, 1, f64::NAN), vec![0], 1).is_err());
    }

    #[test]
    fn subset_remaps_designated_test() {
        let ds = Dataset::new("t", Matrix::from_fn(5, 1, |i, _| i as f64), vec![0; 5], 1)
            .unwrap()
            .with_designated_test(vec![3, 4])
            .unwrap();
        let sub = ds.subset(&[4, 0, 1]);
        assert_eq!(sub.designated_test, Some(vec![0]));
        assert_eq!(sub.features.get(0, 0), 4.0);
    }
}
