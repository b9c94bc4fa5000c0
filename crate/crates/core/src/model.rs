//! The MLP backbone with an explicit feature-extractor / head split.
//!
//! Layers are affine maps with ReLU after every layer except the last. The
//! first `split_index` layers form the feature extractor; the features `Z`
//! are the activations leaving layer `split_index` (post-ReLU, and
//! post-dropout in train mode), which is what the head consumes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ndcore::{
    affine_backward, affine_forward, dropout, relu, softmax, DropoutMask, Matrix, ReluMask, Rng,
};

pub mod checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    split_index: usize,
    dropout_rate: f64,
}

/// Whether a forward pass is stochastic. Train mode draws dropout masks from
/// the supplied stream when the network has a positive dropout rate.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    relu: Option<ReluMask>,
    dropout: Option<DropoutMask>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub features: Matrix,
    /// `None` when the pass stopped at the feature extractor.
    pub logits: Option<Matrix>,
    pub cache: ForwardCache,
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// Adds `other` into `self`; `other` may cover only a prefix of layers.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            mine.weight.add_assign(&theirs.weight)?;
            for (a, b) in mine.bias.iter_mut().zip(&theirs.bias) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// All entries flattened in parameter order (per layer: weight, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

impl MlpParams {
    /// Assembles a network from explicit layers, validating the chain and split.
    pub fn from_layers(layers: Vec<Layer>, split_index: usize, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("network needs at least one layer".into()));
        }
        if split_index < 1 || split_index >= layers.len() {
            return Err(Error::Parameter(format!(
                "split_index {split_index} must satisfy 1 <= split_index < {}",
                layers.len()
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Dimension {
                    op: "layer bias",
                    left: l.weight.shape(),
                    right: (1, l.bias.len()),
                });
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::Dimension {
                    op: "layer chain",
                    left: layers[i - 1].weight.shape(),
                    right: l.weight.shape(),
                });
            }
        }
        Ok(MlpParams {
            layers,
            split_index,
            dropout_rate,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.split_index - 1].out_dim()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Layer::out_dim));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters in the same order as [`Gradients::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Mutable access to the `idx`-th flattened parameter.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            if idx < nw {
                return &mut l.weight.as_mut_slice()[idx];
            }
            idx -= nw;
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&self, x: &Matrix, mode: Mode<'_>) -> Result<ForwardOutput> {
        self.run(x, mode, self.layers.len())
    }

    /// Runs only the feature extractor.
    pub fn forward_features(&self, x: &Matrix, mode: Mode<'_>) -> Result<ForwardOutput> {
        self.run(x, mode, self.split_index)
    }

    fn run(&self, x: &Matrix, mut mode: Mode<'_>, depth: usize) -> Result<ForwardOutput> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                op: "mlp forward",
                left: x.shape(),
                right: self.layers[0].weight.shape(),
            });
        }
        let last = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(depth);
        let mut h = x.clone();
        let mut features = None;
        for (i, layer) in self.layers[..depth].iter().enumerate() {
            let pre = affine_forward(&h, &layer.weight, &layer.bias)?;
            let input = std::mem::replace(&mut h, pre);
            let mut cache = LayerCache {
                input,
                relu: None,
                dropout: None,
            };
            if i < last {
                let (act, mask) = relu(&h);
                cache.relu = Some(mask);
                h = act;
                if let Mode::Train(rng) = &mut mode {
                    if self.dropout_rate > 0.0 {
                        let (dropped, mask) = dropout(&h, self.dropout_rate, rng, true)?;
                        cache.dropout = mask;
                        h = dropped;
                    }
                }
            }
            if i + 1 == self.split_index {
                features = Some(h.clone());
            }
            caches.push(cache);
        }
        let features = features.expect("split_index within depth");
        let logits = (depth == self.layers.len()).then_some(h);
        Ok(ForwardOutput {
            features,
            logits,
            cache: ForwardCache { layers: caches },
        })
    }

    /// Backpropagates through the cached pass. `dlogits` enters at the output
    /// (requires a full pass); `dfeatures` is added at the split point. Layers
    /// beyond the cached depth receive zero gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: Option<&Matrix>,
        dfeatures: Option<&Matrix>,
    ) -> Result<Gradients> {
        let depth = cache.layers.len();
        if dlogits.is_some() && depth != self.layers.len() {
            return Err(Error::State(
                "logit gradient supplied for a feature-only pass".into(),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        // gradient w.r.t. the output of layer `i` (after activation/dropout)
        let mut upstream: Option<Matrix> = dlogits.cloned();
        for i in (0..depth).rev() {
            if i + 1 == self.split_index {
                if let Some(dz) = dfeatures {
                    upstream = Some(match upstream {
                        Some(mut g) => {
                            g.add_assign(dz)?;
                            g
                        }
                        None => dz.clone(),
                    });
                }
            }
            let Some(mut g) = upstream.take() else {
                continue;
            };
            let c = &cache.layers[i];
            if let Some(mask) = &c.dropout {
                g = mask.backward(&g)?;
            }
            if let Some(mask) = &c.relu {
                g = mask.backward(&g)?;
            }
            let layer = &self.layers[i];
            let ag = affine_backward(&c.input, &layer.weight, &g)?;
            grads.layers[i] = Layer {
                weight: ag.dw,
                bias: ag.db,
            };
            if i > 0 {
                upstream = Some(ag.dx);
            }
        }
        Ok(grads)
    }

    /// Class probabilities in eval mode.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let out = self.forward(x, Mode::Eval)?;
        Ok(softmax(out.logits.as_ref().expect("full pass")))
    }

    /// Eval-mode features of the feature extractor.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_features(x, Mode::Eval)?.features)
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot(Arc::new(self.clone()))
    }
}

/// Builds a network with weights `N(0, 2/fan_in)` and zero biases.
pub fn init_mlp(
    layer_sizes: &[usize],
    split_index: usize,
    dropout_rate: f64,
    rng: &mut Rng,
) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Parameter(format!("layer size {pos} is zero")));
    }
    let n_layers = layer_sizes.len() - 1;
    if split_index < 1 || split_index >= n_layers {
        return Err(Error::Parameter(format!(
            "split_index {split_index} must satisfy 1 <= split_index < {n_layers}"
        )));
    }
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            Layer {
                weight: Matrix::from_fn(fan_in, fan_out, |_, _| std * rng.normal()),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    MlpParams::from_layers(layers, split_index, dropout_rate)
}

/// Immutable copy of the parameters at one training instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot(Arc<MlpParams>);

impl ParamSnapshot {
    pub fn params(&self) -> &MlpParams {
        &self.0
    }

    pub fn restore(&self) -> MlpParams {
        (*self.0).clone()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.0.predict_proba(x)
    }

    pub fn same_structure(&self, other: &ParamSnapshot) -> bool {
        self.0.split_index == other.0.split_index
            && self.0.layers.len() == other.0.layers.len()
            && self
                .0
                .layers
                .iter()
                .zip(&other.0.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape())
    }
}
