//! Finite-difference verification of every analytic gradient.
//!
//! Each suite draws seeded random instances, reduces the op's output to a
//! scalar through a random linear functional (or uses the loss directly),
//! and compares the analytic gradient with central differences using the
//! norm-wise relative error `‖a − n‖ / (‖a‖ + ‖n‖)`. Instances whose ReLU
//! preactivations sit within reach of the kink are redrawn, since the
//! finite difference is meaningless there.

use crate::error::Result;
use crate::mmd::{median_heuristic, mmd2_biased, mmd2_grad, KernelSpec};
use crate::model::{init_mlp, Gradients, MlpParams, Mode};
use crate::ndcore::{
    affine_backward, affine_forward, dot, dropout, relu, softmax_cross_entropy, Matrix, Rng, Stream,
};

pub const STEP: f64 = 1e-6;
pub const THRESHOLD: f64 = 1e-5;
/// Distance from zero a preactivation must keep; a step of `STEP` on any
/// input moves it by far less than this.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub instances: usize,
    /// Adds `value · max(‖g‖, 1)` to the first analytic gradient entry of
    /// every instance; a negative control for the harness itself.
    pub inject_error: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            instances: 20,
            inject_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= THRESHOLD
    }
}

pub const SUITES: [&str; 7] = [
    "affine",
    "relu",
    "softmax_ce",
    "dropout",
    "mmd2_grad_single",
    "mmd2_grad_multi",
    "mlp_ce_mmd",
];

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = dot(analytic, analytic).sqrt() + dot(numeric, numeric).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every entry of `x`.
pub fn numeric_gradient(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(x);
            x[i] = orig - STEP;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn with_entries(shape: (usize, usize), data: &[f64]) -> Matrix {
    Matrix::from_vec(shape.0, shape.1, data.to_vec()).expect("shape preserved")
}

fn weighted_sum(m: &Matrix, r: &Matrix) -> f64 {
    dot(m.as_slice(), r.as_slice())
}

struct Suite {
    opts: GradcheckOptions,
    rng: Rng,
    worst: f64,
}

impl Suite {
    fn new(opts: &GradcheckOptions, id: u64) -> Self {
        Suite {
            opts: opts.clone(),
            rng: Rng::derive(opts.seed, Stream::Gradcheck, id, 0),
            worst: 0.0,
        }
    }

    fn record(&mut self, mut analytic: Vec<f64>, numeric: &[f64]) {
        if let Some(e) = self.opts.inject_error {
            let norm = dot(&analytic, &analytic).sqrt().max(1.0);
            if let Some(first) = analytic.first_mut() {
                *first += e * norm;
            }
        }
        let err = relative_error(&analytic, numeric);
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }

    fn report(self, name: &'static str) -> SuiteReport {
        SuiteReport {
            name,
            instances: self.opts.instances,
            max_rel_err: self.worst,
        }
    }
}

fn check_affine(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut s = Suite::new(opts, 1);
    for _ in 0..opts.instances {
        let (n, d, k) = (1 + s.rng.below(5), 1 + s.rng.below(6), 1 + s.rng.below(6));
        let x = gaussian(n, d, &mut s.rng);
        let w = gaussian(d, k, &mut s.rng);
        let b: Vec<f64> = (0..k).map(|_| s.rng.normal()).collect();
        let r = gaussian(n, k, &mut s.rng);
        let g = affine_backward(&x, &w, &r)?;

        let mut analytic = g.dx.into_vec();
        analytic.extend(g.dw.into_vec());
        analytic.extend(&g.db);

        let mut theta = x.as_slice().to_vec();
        theta.extend(w.as_slice());
        theta.extend(&b);
        let (nx, nw) = (n * d, d * k);
        let numeric = numeric_gradient(&mut theta, |t| {
            let y = affine_forward(&with_entries((n, d), &t[..nx]), &with_entries((d, k), &t[nx..nx + nw]), &t[nx + nw..])
                .expect("shapes agree");
            weighted_sum(&y, &r)
        });
        s.record(analytic, &numeric);
    }
    Ok(s.report("affine"))
}

fn away_from_kink(rng: &mut Rng) -> f64 {
    loop {
        let v = rng.normal();
        if v.abs() > KINK_MARGIN {
            return v;
        }
    }
}

fn check_relu(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut s = Suite::new(opts, 2);
    for _ in 0..opts.instances {
        let (n, d) = (1 + s.rng.below(5), 1 + s.rng.below(8));
        let x = Matrix::from_fn(n, d, |_, _| away_from_kink(&mut s.rng));
        let r = gaussian(n, d, &mut s.rng);
        let (_, mask) = relu(&x);
        let analytic = mask.backward(&r)?.into_vec();
        let mut theta = x.as_slice().to_vec();
        let numeric = numeric_gradient(&mut theta, |t| weighted_sum(&relu(&with_entries((n, d), t)).0, &r));
        s.record(analytic, &numeric);
    }
    Ok(s.report("relu"))
}

fn check_softmax_ce(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut s = Suite::new(opts, 3);
    for _ in 0..opts.instances {
        let (n, c) = (1 + s.rng.below(6), 2 + s.rng.below(8));
        let logits = gaussian(n, c, &mut s.rng).scale(3.0);
        let labels: Vec<usize> = (0..n).map(|_| s.rng.below(c)).collect();
        let analytic = softmax_cross_entropy(&logits, &labels)?.dlogits.into_vec();
        let mut theta = logits.as_slice().to_vec();
        let numeric = numeric_gradient(&mut theta, |t| {
            softmax_cross_entropy(&with_entries((n, c), t), &labels)
                .expect("valid labels")
                .loss
        });
        s.record(analytic, &numeric);
    }
    Ok(s.report("softmax_ce"))
}

fn check_dropout(opts: &GradcheckOptions) -> Result<SuiteReport> {
    let mut s = Suite::new(opts, 4);
    for _ in 0..opts.instances {
        let (n, d) = (1 + s.rng.below(5), 1 + s.rng.below(8));
        let rate = 0.1 + 0.8 * s.rng.uniform();
        let x = gaussian(n, d, &mut s.rng);
        let r = gaussian(n, d, &mut s.rng);
        let (_, mask) = dropout(&x, rate, &mut s.rng, true)?;
        let mask = mask.expect("train mode with positive rate");
        let analytic = mask.backward(&r)?.into_vec();
        let mut theta = x.as_slice().to_vec();
        let numeric = numeric_gradient(&mut theta, |t| {
            weighted_sum(&mask.apply(&with_entries((n, d), t)).expect("same shape"), &r)
        });
        s.record(analytic, &numeric);
    }
    Ok(s.report("dropout"))
}

fn check_mmd(opts: &GradcheckOptions, multi: bool) -> Result<SuiteReport> {
    let mut s = Suite::new(opts, if multi { 6 } else { 5 });
    for _ in 0..opts.instances {
        let (a, b, d) = (1 + s.rng.below(6), 1 + s.rng.below(6), 1 + s.rng.below(5));
        let zl = gaussian(a, d, &mut s.rng);
        let zp = gaussian(b, d, &mut s.rng).scale(1.5);
        let sigma = 0.5 + 2.0 * s.rng.uniform();
        let spec = if multi {
            KernelSpec::multi_scale(sigma)?
        } else {
            KernelSpec::single(sigma)?
        };
        let (dl, dp) = mmd2_grad(&zl, &zp, &spec)?;
        let mut analytic = dl.into_vec();
        analytic.extend(dp.into_vec());
        let mut theta = zl.as_slice().to_vec();
        theta.extend(zp.as_slice());
        let numeric = numeric_gradient(&mut theta, |t| {
            mmd2_biased(&with_entries((a, d), &t[..a * d]), &with_entries((b, d), &t[a * d..]), &spec)
                .expect("shapes agree")
        });
        s.record(analytic, &numeric);
    }
    Ok(s.report(if multi { "mmd2_grad_multi" } else { "mmd2_grad_single" }))
}

fn min_abs_preactivation(params: &MlpParams, x: &Matrix) -> Result<f64> {
    let mut h = x.clone();
    let mut smallest = f64::INFINITY;
    let last = params.layers().len() - 1;
    for layer in &params.layers()[..last] {
        let pre = affine_forward(&h, &layer.weight, &layer.bias)?;
        smallest = pre.as_slice().iter().fold(smallest, |m, v| m.min(v.abs()));
        h = relu(&pre).0;
    }
    Ok(smallest)
}

/// `CE(x_l) + λ·MMD²(Z(x_l), Z(x_p))` and its parameter gradient, assembled
/// exactly as the trainer does.
pub fn composite_loss_and_grad(
    params: &MlpParams,
    xl: &Matrix,
    yl: &[usize],
    xp: &Matrix,
    lambda: f64,
    spec: &KernelSpec,
) -> Result<(f64, Gradients)> {
    let out_l = params.forward(xl, Mode::Eval)?;
    let ce = softmax_cross_entropy(out_l.logits.as_ref().expect("full pass"), yl)?;
    let out_p = params.forward_features(xp, Mode::Eval)?;
    let mmd = mmd2_biased(&out_l.features, &out_p.features, spec)?;
    let (dzl, dzp) = mmd2_grad(&out_l.features, &out_p.features, spec)?;
    let mut g = params.backward(&out_l.cache, Some(&ce.dlogits), Some(&dzl.scale(lambda)))?;
    g.accumulate(&params.backward(&out_p.cache, None, Some(&dzp.scale(lambda)))?)?;
    Ok((ce.loss + lambda * mmd, g))
}

fn check_composite(opts: &GradcheckOptions) -> Result<SuiteReport> {
    const SIZES: [usize; 3] = [4, 8, 3];
    const BATCH: usize = 5;
    let mut s = Suite::new(opts, 7);
    for _ in 0..opts.instances {
        let (params, xl, xp) = loop {
            let params = init_mlp(&SIZES, 1, 0.0, &mut s.rng)?;
            let xl = gaussian(BATCH, SIZES[0], &mut s.rng);
            let xp = gaussian(BATCH, SIZES[0], &mut s.rng);
            if min_abs_preactivation(&params, &xl)? > KINK_MARGIN
                && min_abs_preactivation(&params, &xp)? > KINK_MARGIN
            {
                break (params, xl, xp);
            }
        };
        let yl: Vec<usize> = (0..BATCH).map(|_| s.rng.below(SIZES[2])).collect();
        let lambda = 0.1 + s.rng.uniform();
        let spec = KernelSpec::single(median_heuristic(&params.features(&xp)?))?;
        let (_, g) = composite_loss_and_grad(&params, &xl, &yl, &xp, lambda, &spec)?;

        let mut probe = params.clone();
        let count = probe.param_count();
        let numeric: Vec<f64> = (0..count)
            .map(|i| {
                let orig = *probe.param_mut(i);
                *probe.param_mut(i) = orig + STEP;
                let up = composite_loss_and_grad(&probe, &xl, &yl, &xp, lambda, &spec).map(|r| r.0);
                *probe.param_mut(i) = orig - STEP;
                let down = composite_loss_and_grad(&probe, &xl, &yl, &xp, lambda, &spec).map(|r| r.0);
                *probe.param_mut(i) = orig;
                Ok((up? - down?) / (2.0 * STEP))
            })
            .collect::<Result<_>>()?;
        s.record(g.flatten(), &numeric);
    }
    Ok(s.report("mlp_ce_mmd"))
}

/// Runs every suite in a fixed order.
pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        check_affine(opts)?,
        check_relu(opts)?,
        check_softmax_ce(opts)?,
        check_dropout(opts)?,
        check_mmd(opts, false)?,
        check_mmd(opts, true)?,
        check_composite(opts)?,
    ])
}
