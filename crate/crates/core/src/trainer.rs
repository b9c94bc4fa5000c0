//! SGD on `CE(B_L) + λ·MMD²(Z_{B_L}, Z_{B_P})` with a cyclic learning rate
//! that harvests checkpoints along the trajectory.
//!
//! Schedule: the first half of the epochs runs at `base_lr`. The second half
//! is split into `n_checkpoints` cycles of (as near as possible) equal step
//! counts; inside each cycle the rate decays linearly from `base_lr` to
//! `base_lr · lr_floor_ratio`, and a snapshot is taken at the last step of
//! every cycle.
//!
//! RNG consumption contract: every step draws the labeled batch and then the
//! pool batch from the `Batches` stream, whatever λ is. Dropout masks for the
//! labeled pass come from the `Dropout` stream and those for the pool pass
//! from the separate `PoolDropout` stream, so the pool pass never perturbs
//! the labeled-batch randomness. A CE-only reference that draws both batches
//! the same way reproduces a λ = 0 run bit-for-bit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alcore::PoolState;
use crate::error::{Error, Result};
use crate::mmd::{median_heuristic, mmd2_biased, mmd2_grad, KernelSpec};
use crate::model::{init_mlp, Gradients, MlpParams, Mode, ParamSnapshot};
use crate::ndcore::{softmax_cross_entropy, Rng, Stream};

/// Where the MMD bandwidths come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSource {
    /// Median pairwise distance of the first pool batch's features, frozen for
    /// the round; `multi_scale` expands it to `{σ/2, σ, 2σ}`.
    Median {
        #[serde(default)]
        multi_scale: bool,
    },
    Explicit(Vec<f64>),
}

impl Default for KernelSource {
    fn default() -> Self {
        KernelSource::Median { multi_scale: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub weight_decay: f64,
    pub n_checkpoints: usize,
    pub lr_floor_ratio: f64,
    pub kernel: KernelSource,
    /// Round-specific seed; the experiment runner derives it.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 1e-3,
            batch_size: 64,
            lambda: 0.1,
            weight_decay: 1e-4,
            n_checkpoints: 5,
            lr_floor_ratio: 0.1,
            kernel: KernelSource::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the invariants; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.n_checkpoints == 0 {
            return Err(("n_checkpoints", "must be at least 1".into()));
        }
        if !self.epochs.is_multiple_of(2) || self.epochs < 2 * self.n_checkpoints {
            return Err((
                "epochs",
                format!(
                    "must be even and at least 2·n_checkpoints = {}, got {}",
                    2 * self.n_checkpoints,
                    self.epochs
                ),
            ));
        }
        if self.batch_size < 2 {
            return Err(("batch_size", format!("must be at least 2, got {}", self.batch_size)));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(("base_lr", format!("must be positive, got {}", self.base_lr)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(("lambda", format!("must be nonnegative, got {}", self.lambda)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err((
                "weight_decay",
                format!("must be nonnegative, got {}", self.weight_decay),
            ));
        }
        if !(0.0..=1.0).contains(&self.lr_floor_ratio) {
            return Err((
                "lr_floor_ratio",
                format!("must lie in [0, 1], got {}", self.lr_floor_ratio),
            ));
        }
        if let KernelSource::Explicit(bw) = &self.kernel {
            if let Err(e) = KernelSpec::new(bw.clone()) {
                return Err(("kernel", e.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub split_index: usize,
    pub dropout_rate: f64,
}

/// Ordered, nonempty list of structurally identical snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSet {
    snapshots: Vec<ParamSnapshot>,
}

impl CheckpointSet {
    pub fn new(snapshots: Vec<ParamSnapshot>) -> Result<Self> {
        let Some(first) = snapshots.first() else {
            return Err(Error::Parameter("checkpoint set must be nonempty".into()));
        };
        if !snapshots.iter().all(|s| s.same_structure(first)) {
            return Err(Error::Parameter(
                "checkpoints must share one architecture".into(),
            ));
        }
        Ok(CheckpointSet { snapshots })
    }

    pub fn snapshots(&self) -> &[ParamSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_mmd2: f64,
    /// Learning rate at the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: MlpParams,
    pub trajectory: CheckpointSet,
    pub history: Vec<EpochStats>,
    /// Global step index of each snapshot.
    pub snapshot_steps: Vec<usize>,
    pub steps_per_epoch: usize,
    pub kernel: KernelSpec,
}

pub fn steps_per_epoch(labeled: usize, batch_size: usize) -> usize {
    labeled.div_ceil(batch_size).max(1)
}

/// First step of cycle `i` (0..=n) within the second half, as an offset.
fn cycle_start(i: usize, half_steps: usize, n: usize) -> usize {
    i * half_steps / n
}

pub fn cyclic_lr(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.epochs * steps_per_epoch;
    let half = (cfg.epochs / 2) * steps_per_epoch;
    if step < half {
        return cfg.base_lr;
    }
    let floor = cfg.base_lr * cfg.lr_floor_ratio;
    let span = total - half;
    let n = cfg.n_checkpoints;
    let s = step - half;
    if s >= span || span == 0 {
        return floor;
    }
    let mut c = (s * n / span).min(n - 1);
    while cycle_start(c, span, n) > s {
        c -= 1;
    }
    while cycle_start(c + 1, span, n) <= s {
        c += 1;
    }
    let start = cycle_start(c, span, n);
    let len = cycle_start(c + 1, span, n) - start;
    if len <= 1 {
        return floor;
    }
    let frac = (s - start) as f64 / (len - 1) as f64;
    cfg.base_lr * (1.0 - (1.0 - cfg.lr_floor_ratio) * frac)
}

/// Global steps at which snapshots are taken: the last step of each cycle.
pub fn checkpoint_steps(steps_per_epoch: usize, cfg: &TrainConfig) -> Vec<usize> {
    let half = (cfg.epochs / 2) * steps_per_epoch;
    let span = cfg.epochs * steps_per_epoch - half;
    (1..=cfg.n_checkpoints)
        .map(|i| half + cycle_start(i, span, cfg.n_checkpoints) - 1)
        .collect()
}

/// `θ ← θ − lr·(g + weight_decay·θ)`.
pub fn sgd_step(params: &mut MlpParams, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
    if grads.layers.len() != params.layers().len() {
        return Err(Error::Parameter("gradient layout does not match parameters".into()));
    }
    for (l, g) in params.layers().iter().zip(&grads.layers) {
        if l.weight.shape() != g.weight.shape() || l.bias.len() != g.bias.len() {
            return Err(Error::Dimension {
                op: "sgd_step",
                left: l.weight.shape(),
                right: g.weight.shape(),
            });
        }
    }
    if !grads.is_finite() {
        return Err(Error::Diverged {
            step: None,
            what: "non-finite gradient".into(),
        });
    }
    for (l, g) in params.layers_mut().iter_mut().zip(&grads.layers) {
        for (w, gw) in l.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
            *w -= lr * (gw + weight_decay * *w);
        }
        for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
            *b -= lr * (gb + weight_decay * *b);
        }
    }
    Ok(())
}

/// `size` indices from `from`: without replacement when there are enough,
/// otherwise uniform draws with replacement.
pub fn draw_batch(from: &[usize], size: usize, rng: &mut Rng) -> Vec<usize> {
    if from.len() >= size {
        rng.sample_distinct(from.len(), size)
            .into_iter()
            .map(|k| from[k])
            .collect()
    } else {
        (0..size).map(|_| from[rng.below(from.len())]).collect()
    }
}

/// Trains a freshly initialised network on the pool's labeled set.
pub fn train_round(pool: &PoolState, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()
        .map_err(|(field, msg)| Error::Parameter(format!("train.{field}: {msg}")))?;
    let labeled = pool.labeled().to_vec();
    if labeled.is_empty() {
        return Err(Error::State("cannot train on an empty labeled set".into()));
    }
    let pool_idx = pool.pool_indices();

    let mut params = init_mlp(
        &spec.layer_sizes,
        spec.split_index,
        spec.dropout_rate,
        &mut Rng::derive(cfg.seed, Stream::Init, 0, 0),
    )?;
    let mut batch_rng = Rng::derive(cfg.seed, Stream::Batches, 0, 0);
    let mut drop_rng = Rng::derive(cfg.seed, Stream::Dropout, 0, 0);
    let mut pool_drop_rng = Rng::derive(cfg.seed, Stream::PoolDropout, 0, 0);

    let spe = steps_per_epoch(labeled.len(), cfg.batch_size);
    let total = cfg.epochs * spe;
    let ckpt_steps = checkpoint_steps(spe, cfg);
    let mut kernel = match &cfg.kernel {
        KernelSource::Explicit(bw) => Some(KernelSpec::new(bw.clone())?),
        KernelSource::Median { .. } => None,
    };

    let mut snapshots = Vec::with_capacity(cfg.n_checkpoints);
    let mut history = Vec::with_capacity(cfg.epochs);
    let (mut ce_sum, mut mmd_sum) = (0.0, 0.0);

    for step in 0..total {
        let lr = cyclic_lr(step, spe, cfg);
        let bl = draw_batch(&labeled, cfg.batch_size, &mut batch_rng);
        let bp = draw_batch(&pool_idx, cfg.batch_size, &mut batch_rng);

        let out_l = params.forward(&pool.rows(&bl), Mode::Train(&mut drop_rng))?;
        let ce = softmax_cross_entropy(out_l.logits.as_ref().expect("full pass"), &pool.labels_of(&bl))?;
        let out_p = params.forward_features(&pool.rows(&bp), Mode::Train(&mut pool_drop_rng))?;

        let kernel = kernel.get_or_insert_with(|| {
            let sigma = median_heuristic(&out_p.features);
            match cfg.kernel {
                KernelSource::Median { multi_scale: true } => KernelSpec::multi_scale(sigma),
                _ => KernelSpec::single(sigma),
            }
            .expect("median heuristic yields a positive bandwidth")
        });
        let mmd = mmd2_biased(&out_l.features, &out_p.features, kernel)?;
        let loss = ce.loss + cfg.lambda * mmd;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: Some(step),
                what: format!("loss is {loss} (ce {}, mmd² {mmd})", ce.loss),
            });
        }

        let grads = if cfg.lambda > 0.0 {
            let (dzl, dzp) = mmd2_grad(&out_l.features, &out_p.features, kernel)?;
            let mut g = params.backward(
                &out_l.cache,
                Some(&ce.dlogits),
                Some(&dzl.scale(cfg.lambda)),
            )?;
            g.accumulate(&params.backward(&out_p.cache, None, Some(&dzp.scale(cfg.lambda)))?)?;
            g
        } else {
            params.backward(&out_l.cache, Some(&ce.dlogits), None)?
        };
        sgd_step(&mut params, &grads, lr, cfg.weight_decay).map_err(|e| match e {
            Error::Diverged { what, .. } => Error::Diverged {
                step: Some(step),
                what,
            },
            other => other,
        })?;

        ce_sum += ce.loss;
        mmd_sum += mmd;
        if (step + 1) % spe == 0 {
            history.push(EpochStats {
                epoch: step / spe,
                mean_ce: ce_sum / spe as f64,
                mean_mmd2: mmd_sum / spe as f64,
                lr,
            });
            ce_sum = 0.0;
            mmd_sum = 0.0;
        }
        if ckpt_steps.binary_search(&step).is_ok() {
            snapshots.push(params.snapshot());
        }
    }

    Ok(TrainOutcome {
        final_params: params,
        trajectory: CheckpointSet::new(snapshots)?,
        history,
        snapshot_steps: ckpt_steps,
        steps_per_epoch: spe,
        kernel: kernel.expect("at least one step ran"),
    })
}

/// Writes `epoch,mean_ce,mean_mmd2,lr` rows.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,mean_ce,mean_mmd2,lr\n");
    for h in history {
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.mean_ce, h.mean_mmd2, h.lr));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
