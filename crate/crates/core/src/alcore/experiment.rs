use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, init_pool, PoolState, Predictor, TestSplit};
use crate::acquisition::{
    bald_acquire, coreset_acquire, entropy_acquire, mpts_acquire, random_acquire, AcquisitionResult,
    Method,
};
use crate::config::{DatasetConfig, ExperimentConfig, Standardize};
use crate::dataio::{load_csv, load_mnist_dir, standardize, synth_blobs, Dataset, LabelMap};
use crate::error::{Error, Result};
use crate::ndcore::{Rng, Stream};
use crate::trainer::{train_round, write_history_csv, ModelSpec, TrainConfig};

/// One evaluated round of one (method, repeat) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub method: Method,
    pub repeat: usize,
    pub round: usize,
    pub labeled_count: usize,
    pub repeat_seed: u64,
    pub test_accuracy: f64,
    /// Zero unless timing is recorded.
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads for (method, repeat) cells; 0 uses rayon's default.
    pub jobs: usize,
    /// Where per-round scores and training histories go, if anywhere.
    pub diagnostics_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            diagnostics_dir: None,
        }
    }
}

/// Seed from which every random choice of one repeat is derived.
pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    Rng::derive(master, Stream::Partition, repeat as u64, 0).next_u64()
}

/// Training seed of one round; shared by all methods of the repeat.
pub fn round_seed(repeat_seed: u64, round: usize) -> u64 {
    Rng::derive(repeat_seed, Stream::Round, round as u64, 0).next_u64()
}

/// Loads or generates the dataset named by the config, before any
/// per-repeat splitting.
pub fn load_base_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Option<LabelMap>)> {
    match &cfg.dataset {
        DatasetConfig::Mnist { dir, .. } => Ok((load_mnist_dir(dir)?, None)),
        DatasetConfig::Csv {
            path, label_column, ..
        } => {
            let (ds, map) = load_csv(path, label_column)?;
            Ok((ds, Some(map)))
        }
        DatasetConfig::Synthetic {
            classes,
            per_class,
            dim,
            separation,
            ..
        } => Ok((
            synth_blobs(
                *classes,
                *per_class,
                *dim,
                *separation,
                &mut Rng::derive(cfg.master_seed, Stream::Synth, 0, 0),
            )?,
            None,
        )),
    }
}

/// Builds the starting pool of one repeat: test split, pool subsampling,
/// initial labeled draw and standardisation. Rows are reordered so that the
/// pool comes first (ascending original index) followed by the test rows.
pub fn prepare_repeat(base: &Dataset, cfg: &ExperimentConfig, repeat: usize) -> Result<PoolState> {
    let seed = repeat_seed(cfg.master_seed, repeat);
    let n = base.len();
    let test: Vec<usize> = match (&base.designated_test, &cfg.dataset) {
        (Some(t), _) => {
            let mut t = t.clone();
            t.sort_unstable();
            t
        }
        (None, DatasetConfig::Csv { test_fraction, .. } | DatasetConfig::Synthetic { test_fraction, .. }) => {
            let k = (test_fraction * n as f64).round() as usize;
            let mut t = Rng::derive(seed, Stream::Partition, 0, 0).sample_distinct(n, k);
            t.sort_unstable();
            t
        }
        (None, DatasetConfig::Mnist { .. }) => {
            return Err(Error::State("MNIST data without its test split".into()))
        }
    };
    if test.is_empty() {
        return Err(Error::config("dataset", "the test split is empty"));
    }
    let mut is_test = vec![false; n];
    for &t in &test {
        is_test[t] = true;
    }
    let mut pool_rows: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    if let Some(size) = cfg.dataset.pool_size() {
        if size < pool_rows.len() {
            let mut keep: Vec<usize> = Rng::derive(seed, Stream::Subsample, 0, 0)
                .sample_distinct(pool_rows.len(), size)
                .into_iter()
                .map(|k| pool_rows[k])
                .collect();
            keep.sort_unstable();
            pool_rows = keep;
        }
    }
    let n_pool = pool_rows.len();
    let mut rows = pool_rows;
    rows.extend(&test);
    let dataset = base.subset(&rows).with_designated_test((n_pool..rows.len()).collect())?;

    let restrict = cfg.bias_mode.as_ref().map(|b| b.classes.as_slice());
    if let Some(classes) = restrict {
        if let Some(&c) = classes.iter().find(|&&c| c >= dataset.class_count) {
            return Err(Error::config(
                "bias_mode.classes",
                format!("class {c} does not exist (dataset has {})", dataset.class_count),
            ));
        }
    }
    let pool = init_pool(
        Arc::new(dataset),
        cfg.initial_count,
        TestSplit::Designated,
        restrict,
        &mut Rng::derive(seed, Stream::Partition, 1, 0),
    )?;

    let stat_rows = match cfg.dataset.standardize() {
        Standardize::None => return Ok(pool),
        Standardize::AllPool => pool.pool_indices(),
        Standardize::LabeledOnly => pool.labeled().to_vec(),
    };
    let scaled = standardize(pool.dataset(), &stat_rows)?.dataset;
    PoolState::from_parts(
        Arc::new(scaled),
        pool.labeled().to_vec(),
        pool.unlabeled(),
        pool.test().to_vec(),
    )
}

fn model_spec(cfg: &ExperimentConfig, pool: &PoolState, method: Method) -> ModelSpec {
    ModelSpec {
        layer_sizes: cfg.layer_sizes(pool.dataset().dim(), pool.class_count()),
        split_index: cfg.split_index(),
        dropout_rate: if method == Method::Bald { cfg.bald_dropout } else { 0.0 },
    }
}

fn train_config(cfg: &ExperimentConfig, method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda: if method == Method::Mpts { cfg.train.lambda } else { 0.0 },
        seed,
        ..cfg.train.clone()
    }
}

/// Runs every round of one (method, repeat) cell from the prepared pool.
/// `progress` sees each log together with the measured seconds of its round.
pub fn run_cell(
    cfg: &ExperimentConfig,
    method: Method,
    repeat: usize,
    mut pool: PoolState,
    opts: &RunOptions,
    progress: &(dyn Fn(&RoundLog, f64) + Sync),
) -> Result<Vec<RoundLog>> {
    let seed = repeat_seed(cfg.master_seed, repeat);
    let spec = model_spec(cfg, &pool, method);
    let mut logs = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let ctx = |e: Error| e.context(format!("method {method}, repeat {repeat}, round {round}"));
        let started = Instant::now();
        let tcfg = train_config(cfg, method, round_seed(seed, round));
        let outcome = train_round(&pool, &spec, &tcfg).map_err(ctx)?;
        let predictor = match method {
            Method::Mpts => Predictor::Trajectory(&outcome.trajectory),
            _ => Predictor::Single(&outcome.final_params),
        };
        let acc = evaluate(predictor, &pool).map_err(ctx)?;

        let last = round + 1 == cfg.rounds || pool.unlabeled_count() == 0;
        let acquired = if last {
            None
        } else {
            let mut rng = Rng::derive(seed, Stream::Acquire(method.id()), round as u64, 0);
            let result = match method {
                Method::Mpts => mpts_acquire(&outcome.trajectory, &pool, cfg.budget),
                Method::Random => random_acquire(&pool, cfg.budget, &mut rng),
                Method::Entropy => entropy_acquire(&outcome.final_params, &pool, cfg.budget),
                Method::Bald => bald_acquire(
                    &outcome.final_params,
                    &pool,
                    cfg.budget,
                    cfg.bald_passes,
                    &mut rng,
                ),
                Method::Coreset => coreset_acquire(&outcome.final_params, &pool, cfg.budget),
            }
            .map_err(ctx)?;
            Some(result)
        };
        let elapsed = started.elapsed().as_secs_f64();

        let log = RoundLog {
            method,
            repeat,
            round,
            labeled_count: pool.labeled().len(),
            repeat_seed: seed,
            test_accuracy: acc,
            wall_time_seconds: if cfg.record_timing { elapsed } else { 0.0 },
        };
        progress(&log, elapsed);
        logs.push(log);

        if let Some(dir) = &opts.diagnostics_dir {
            let stem = format!("{method}_rep{repeat}_round{round}");
            write_history_csv(&dir.join(format!("{stem}_history.csv")), &outcome.history)?;
            if let Some(a) = &acquired {
                write_scores_csv(&dir.join(format!("{stem}_scores.csv")), &pool, a)?;
            }
        }
        match acquired {
            Some(a) => pool.label_points(&a.selected).map_err(ctx)?,
            None => break,
        }
        debug_assert!(pool.check_invariants().is_ok());
    }
    Ok(logs)
}

/// Writes `pool_index,score,selected` for every unlabeled point at scoring
/// time. Coreset scores are per pick, so they are reported on the picked rows
/// only; random has no scores.
pub fn write_scores_csv(path: &Path, pool: &PoolState, result: &AcquisitionResult) -> Result<()> {
    let unlabeled = pool.unlabeled();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let io = |e| csv_io(path, e);
    w.write_record(["pool_index", "score", "selected"]).map_err(io)?;
    let mut score_of = vec![None; pool.dataset().len()];
    if result.scores.len() == unlabeled.len() && result.method != Method::Coreset {
        for (&u, &s) in unlabeled.iter().zip(&result.scores) {
            score_of[u] = Some(s);
        }
    } else {
        for (&u, &s) in result.selected.iter().zip(&result.scores) {
            score_of[u] = Some(s);
        }
    }
    let mut selected = vec![false; pool.dataset().len()];
    for &s in &result.selected {
        selected[s] = true;
    }
    for u in unlabeled {
        let score = score_of[u].map_or_else(String::new, |s: f64| s.to_string());
        w.write_record([u.to_string(), score, (selected[u] as u8).to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Runs all (method, repeat) cells and returns the logs sorted by
/// (method name, repeat, round). Output does not depend on `opts.jobs`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    progress: &(dyn Fn(&RoundLog, f64) + Sync),
) -> Result<Vec<RoundLog>> {
    cfg.validate()?;
    let (base, _) = load_base_dataset(cfg)?;
    if let Some(dir) = &opts.diagnostics_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;

    threads.install(|| {
        let pools = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| prepare_repeat(&base, cfg, r).map_err(|e| e.context(format!("repeat {r}"))))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let mut methods = cfg.methods.clone();
        methods.sort_by_key(|m| m.name());
        let cells: Vec<(Method, usize)> = methods
            .iter()
            .flat_map(|&m| (0..cfg.repeats).map(move |r| (m, r)))
            .collect();
        let results: Vec<Result<Vec<RoundLog>>> = cells
            .par_iter()
            .map(|&(m, r)| run_cell(cfg, m, r, pools[r].clone(), opts, progress))
            .collect();
        let mut logs = Vec::new();
        for r in results {
            logs.extend(r?);
        }
        Ok(logs)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    #[test]
    fn prepare_repeat_orders_pool_then_test() {
        let c = cfg(
            r#"{"dataset": {"kind": "synthetic", "per_class": 20, "test_fraction": 0.25},
                "methods": ["random"], "initial_count": 5}"#,
        );
        let (base, _) = load_base_dataset(&c).unwrap();
        let pool = prepare_repeat(&base, &c, 0).unwrap();
        assert_eq!(pool.test(), &(45..60).collect::<Vec<_>>()[..]);
        assert_eq!(pool.labeled().len(), 5);
        assert_eq!(pool.unlabeled_count(), 40);
        let again = prepare_repeat(&base, &c, 0).unwrap();
        assert_eq!(pool.labeled(), again.labeled());
        let other = prepare_repeat(&base, &c, 1).unwrap();
        assert_ne!(pool.labeled(), other.labeled());
    }

    #[test]
    fn pool_size_subsamples_non_test_rows() {
        let c = cfg(
            r#"{"dataset": {"kind": "synthetic", "per_class": 40, "test_fraction": 0.25},
                "methods": ["random"], "initial_count": 5}"#,
        );
        let (base, _) = load_base_dataset(&c).unwrap();
        let base = base.with_designated_test((100..120).collect()).unwrap();
        let mut c = c;
        c.dataset = DatasetConfig::Csv {
            path: "unused".into(),
            label_column: Default::default(),
            pool_size: Some(30),
            test_fraction: 0.2,
            standardize: Standardize::None,
        };
        let pool = prepare_repeat(&base, &c, 0).unwrap();
        assert_eq!(pool.labeled().len() + pool.unlabeled_count(), 30);
        assert_eq!(pool.test().len(), 20);
    }

    #[test]
    fn labeled_counts_grow_by_budget() {
        let c = cfg(
            r#"{"dataset": {"kind": "synthetic", "per_class": 30},
                "methods": ["random", "entropy"], "initial_count": 10, "budget": 5,
                "rounds": 3, "repeats": 1,
                "train": {"epochs": 10, "batch_size": 8, "n_checkpoints": 2}}"#,
        );
        let logs = run_experiment(&c, &RunOptions::default(), &|_, _| {}).unwrap();
        assert_eq!(logs.len(), 6);
        assert_eq!(logs[0].method, Method::Entropy);
        let counts: Vec<usize> = logs.iter().map(|l| l.labeled_count).collect();
        assert_eq!(counts, vec![10, 15, 20, 10, 15, 20]);
        assert!(logs.iter().all(|l| (0.0..=1.0).contains(&l.test_accuracy)));
        assert!(logs.iter().all(|l| l.wall_time_seconds == 0.0));
    }

    #[test]
    fn stops_when_pool_is_exhausted() {
        let c = cfg(
            r#"{"dataset": {"kind": "synthetic", "per_class": 10, "test_fraction": 0.2},
                "methods": ["random"], "initial_count": 10, "budget": 8,
                "rounds": 5, "repeats": 1,
                "train": {"epochs": 4, "batch_size": 8, "n_checkpoints": 2}}"#,
        );
        let logs = run_experiment(&c, &RunOptions::default(), &|_, _| {}).unwrap();
        let counts: Vec<usize> = logs.iter().map(|l| l.labeled_count).collect();
        assert_eq!(counts, vec![10, 18, 24]);
    }
}
