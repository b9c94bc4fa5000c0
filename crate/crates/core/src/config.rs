//! Experiment configuration (JSON).
//!
//! Unknown keys are rejected everywhere. Defaults:
//!
//! | key | default |
//! |---|---|
//! | `initial_count` | 100 |
//! | `budget` | 100 |
//! | `rounds` | 5 |
//! | `repeats` | 5 |
//! | `train.epochs` | 100 |
//! | `train.base_lr` | 1e-3 |
//! | `train.batch_size` | 64 |
//! | `train.lambda` | 0.1 |
//! | `train.weight_decay` | 1e-4 |
//! | `train.n_checkpoints` | 5 |
//! | `train.lr_floor_ratio` | 0.1 |
//! | `train.kernel` | `{"median": {"multi_scale": false}}` |
//! | `model.hidden_sizes` | `[128]` for MNIST, `[64, 64]` otherwise |
//! | `model.split_index` | number of hidden layers |
//! | `bald_passes` / `bald_dropout` | 20 / 0.5 |
//! | `master_seed` | 0 |
//! | `dataset.test_fraction` | 0.2 (ignored for MNIST, which has its own test set) |
//! | `dataset.standardize` | `all_pool` for CSV and synthetic, `none` for MNIST |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::Method;
use crate::dataio::LabelColumn;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Where standardisation statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardize {
    None,
    /// 𝓛 ∪ 𝓤 of the repeat's partition.
    AllPool,
    /// The repeat's initial labeled set.
    LabeledOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Directory holding the four standard IDX files.
    Mnist {
        dir: PathBuf,
        /// Size of 𝓛 ∪ 𝓤 after subsampling the 60k training rows.
        #[serde(default)]
        pool_size: Option<usize>,
        #[serde(default = "standardize_none")]
        standardize: Standardize,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: LabelColumn,
        #[serde(default)]
        pool_size: Option<usize>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "standardize_all_pool")]
        standardize: Standardize,
    },
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "standardize_all_pool")]
        standardize: Standardize,
    },
}

fn standardize_none() -> Standardize {
    Standardize::None
}
fn standardize_all_pool() -> Standardize {
    Standardize::AllPool
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_classes() -> usize {
    3
}
fn default_per_class() -> usize {
    100
}
fn default_dim() -> usize {
    2
}
fn default_separation() -> f64 {
    5.0
}

impl DatasetConfig {
    pub fn standardize(&self) -> Standardize {
        match self {
            DatasetConfig::Mnist { standardize, .. }
            | DatasetConfig::Csv { standardize, .. }
            | DatasetConfig::Synthetic { standardize, .. } => *standardize,
        }
    }

    pub fn pool_size(&self) -> Option<usize> {
        match self {
            DatasetConfig::Mnist { pool_size, .. } | DatasetConfig::Csv { pool_size, .. } => *pool_size,
            DatasetConfig::Synthetic { .. } => None,
        }
    }

    pub fn is_mnist(&self) -> bool {
        matches!(self, DatasetConfig::Mnist { .. })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = match self {
            DatasetConfig::Mnist { dir, .. } => dir,
            DatasetConfig::Csv { path, .. } => path,
            DatasetConfig::Synthetic { .. } => return,
        };
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_sizes: Option<Vec<usize>>,
    pub split_index: Option<usize>,
}

/// Draws the initial labeled set from these classes only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasMode {
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_hundred")]
    pub initial_count: usize,
    #[serde(default = "default_hundred")]
    pub budget: usize,
    #[serde(default = "default_five")]
    pub rounds: usize,
    #[serde(default = "default_five")]
    pub repeats: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub bias_mode: Option<BiasMode>,
    #[serde(default = "default_bald_passes")]
    pub bald_passes: usize,
    #[serde(default = "default_bald_dropout")]
    pub bald_dropout: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write measured wall-clock seconds into the results files. Off by
    /// default so that results are byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
    /// Write per-round acquisition scores and training histories.
    #[serde(default)]
    pub diagnostics: bool,
}

fn default_hundred() -> usize {
    100
}
fn default_five() -> usize {
    5
}
fn default_bald_passes() -> usize {
    20
}
fn default_bald_dropout() -> f64 {
    0.5
}

impl ExperimentConfig {
    /// Parses JSON and checks invariants. Errors carry the JSON path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".into() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.dataset.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| Err(Error::config(path, msg));
        if self.repeats < 1 {
            return bad("repeats", "must be at least 1".into());
        }
        if self.rounds < 1 {
            return bad("rounds", "must be at least 1".into());
        }
        if self.budget < 1 {
            return bad("budget", "must be at least 1".into());
        }
        if self.initial_count < 1 {
            return bad("initial_count", "must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods", "must list at least one method".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(&format!("methods[{i}]"), format!("`{m}` listed twice"));
            }
        }
        if let Err((field, msg)) = self.train.validate() {
            return bad(&format!("train.{field}"), msg);
        }
        if self.methods.contains(&Method::Bald) {
            if self.bald_passes < 2 {
                return bad("bald_passes", format!("must be at least 2, got {}", self.bald_passes));
            }
            if !(self.bald_dropout > 0.0 && self.bald_dropout < 1.0) {
                return bad("bald_dropout", format!("must lie in (0, 1), got {}", self.bald_dropout));
            }
        }
        if let Some(hidden) = &self.model.hidden_sizes {
            if hidden.is_empty() {
                return bad("model.hidden_sizes", "need at least one hidden layer".into());
            }
            if let Some(pos) = hidden.iter().position(|&h| h == 0) {
                return bad(&format!("model.hidden_sizes[{pos}]"), "must be positive".into());
            }
        }
        if let Some(s) = self.model.split_index {
            let hidden = self.hidden_sizes().len();
            if s < 1 || s > hidden {
                return bad(
                    "model.split_index",
                    format!("must lie in 1..={hidden} (a hidden layer), got {s}"),
                );
            }
        }
        if let Some(b) = &self.bias_mode {
            if b.classes.is_empty() {
                return bad("bias_mode.classes", "must list at least one class".into());
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                test_fraction,
                ..
            } => {
                for (name, v) in [("classes", *classes), ("per_class", *per_class), ("dim", *dim)] {
                    if v < 1 {
                        return bad(&format!("dataset.{name}"), "must be at least 1".into());
                    }
                }
                if *classes < 2 {
                    return bad("dataset.classes", "need at least 2 classes".into());
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return bad("dataset.separation", format!("must be nonnegative, got {separation}"));
                }
                check_fraction(*test_fraction)?;
            }
            DatasetConfig::Csv { test_fraction, .. } => check_fraction(*test_fraction)?,
            DatasetConfig::Mnist { .. } => {}
        }
        if self.dataset.pool_size() == Some(0) {
            return bad("dataset.pool_size", "must be positive".into());
        }
        if let Some(p) = self.dataset.pool_size() {
            if self.initial_count > p {
                return bad(
                    "initial_count",
                    format!("exceeds dataset.pool_size ({} > {p})", self.initial_count),
                );
            }
        }
        Ok(())
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.model.hidden_sizes.clone().unwrap_or_else(|| {
            if self.dataset.is_mnist() {
                vec![128]
            } else {
                vec![64, 64]
            }
        })
    }

    pub fn split_index(&self) -> usize {
        self.model.split_index.unwrap_or(self.hidden_sizes().len())
    }

    /// `[d, hidden…, C]`.
    pub fn layer_sizes(&self, input_dim: usize, class_count: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(self.hidden_sizes());
        sizes.push(class_count);
        sizes
    }

    /// Copy with every default made explicit, for provenance.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.model.hidden_sizes = Some(self.hidden_sizes());
        cfg.model.split_index = Some(self.split_index());
        cfg
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0 < f && f < 1.0) {
        return Err(Error::config(
            "dataset.test_fraction",
            format!("must lie in (0, 1), got {f}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text)
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["random"]}"#).unwrap();
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.base_lr, 1e-3);
        assert_eq!(cfg.repeats, 5);
        assert_eq!(cfg.initial_count, 100);
        assert_eq!(cfg.budget, 100);
        assert_eq!(cfg.bald_passes, 20);
        assert_eq!(cfg.hidden_sizes(), vec![64, 64]);
        assert_eq!(cfg.split_index(), 2);
        assert_eq!(cfg.dataset.standardize(), Standardize::AllPool);
    }

    #[test]
    fn mnist_model_default() {
        let cfg = parse(r#"{"dataset": {"kind": "mnist", "dir": "d", "pool_size": 5000}, "methods": ["mpts"]}"#)
            .unwrap();
        assert_eq!(cfg.layer_sizes(784, 10), vec![784, 128, 10]);
        assert_eq!(cfg.split_index(), 1);
        assert_eq!(cfg.dataset.standardize(), Standardize::None);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = parse(
            r#"{"dataset": {"kind": "synthetic"}, "methods": ["random"], "train": {"lambda_": 0.5}}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "train.lambda_");
                assert!(message.contains("lambda_"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse(r#"{"dataset": {"kind": "synthetic", "colour": 1}, "methods": ["random"]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn invariant_violations() {
        let err = parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["random"], "budget": 0}"#)
            .unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "budget"));
        assert!(parse(r#"{"dataset": {"kind": "synthetic"}, "methods": []}"#).is_err());
        assert!(parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["random"], "rounds": 0}"#).is_err());
        assert!(parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["random", "random"]}"#).is_err());
        let err = parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["random"], "train": {"epochs": 7}}"#)
            .unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "train.epochs"));
        let err = parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["badge"]}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "methods[0]"), "{err}");
    }

    #[test]
    fn malformed_json_is_config_error() {
        assert!(matches!(parse("{"), Err(Error::Config { .. })));
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = parse(r#"{"dataset": {"kind": "synthetic"}, "methods": ["mpts", "coreset"]}"#).unwrap();
        let again = parse(&cfg.resolved().to_json_pretty()).unwrap();
        assert_eq!(again, cfg.resolved());
    }
}
