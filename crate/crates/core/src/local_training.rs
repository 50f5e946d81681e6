//! Client-side model definition, loss/gradient computation, multi-epoch
//! mini-batch SGD and test-set evaluation.
//!
//! Models are fully connected nets with leaky-ReLU hidden layers and either
//! a softmax (multi-class) or sigmoid (binary) output, trained on mean
//! cross-entropy. Parameters live in one flat vector: for each layer, the
//! weight matrix in row-major (output-major) order followed by the biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Input size, hidden sizes, output size.
    pub layer_sizes: Vec<usize>,
    /// Negative slope of the leaky-ReLU hidden activations.
    pub negative_slope: f64,
    pub output: OutputActivation,
}

impl ModelSpec {
    /// Binary logistic regression: one affine layer with a sigmoid output.
    pub fn logistic_regression(features: usize) -> Self {
        ModelSpec {
            layer_sizes: vec![features, 1],
            negative_slope: 0.1,
            output: OutputActivation::Sigmoid,
        }
    }

    /// Fully connected net with the default 0.1 negative slope.
    pub fn mlp(layer_sizes: Vec<usize>, output: OutputActivation) -> Self {
        ModelSpec {
            layer_sizes,
            negative_slope: 0.1,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid(
                "layer_sizes",
                "need at least an input and an output size",
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes", "all sizes must be positive"));
        }
        let out = *self.layer_sizes.last().unwrap();
        match self.output {
            OutputActivation::Sigmoid if out != 1 => {
                return Err(Error::invalid(
                    "layer_sizes",
                    format!("sigmoid output requires one output unit, got {out}"),
                ));
            }
            OutputActivation::Softmax if out < 2 => {
                return Err(Error::invalid(
                    "layer_sizes",
                    "softmax output requires at least two output units",
                ));
            }
            _ => {}
        }
        if !(self.negative_slope.is_finite() && (0.0..1.0).contains(&self.negative_slope)) {
            return Err(Error::invalid(
                "negative_slope",
                format!("must lie in [0, 1), got {}", self.negative_slope),
            ));
        }
        Ok(())
    }

    /// Total parameter count: Σ (in · out + out) over layers.
    pub fn param_dim(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of classes the model distinguishes.
    pub fn class_count(&self) -> usize {
        match self.output {
            OutputActivation::Sigmoid => 2,
            OutputActivation::Softmax => *self.layer_sizes.last().unwrap(),
        }
    }

    /// Uniform init in [-1/√fan_in, +1/√fan_in] per layer, weights and
    /// biases alike.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_dim());
        for w in self.layer_sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                values.push(rng.random_range(-bound..bound));
            }
        }
        ParamVector::new(values).expect("bounded init is finite")
    }

    /// (weight offset, bias offset, in, out) per layer.
    fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut layers = Vec::with_capacity(self.layer_sizes.len() - 1);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            layers.push((offset, offset + n_in * n_out, n_in, n_out));
            offset += n_in * n_out + n_out;
        }
        layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            ));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::invalid(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        Ok(())
    }
}

/// Reusable per-sample buffers for forward and backward passes.
struct Scratch {
    /// acts[0] is the input row, acts[l] the post-activation of layer l.
    acts: Vec<Vec<f64>>,
    /// Pre-activations z of layer l at index l - 1.
    zs: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        let acts = spec.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
        let zs = spec.layer_sizes[1..]
            .iter()
            .map(|&s| vec![0.0; s])
            .collect();
        let widest = *spec.layer_sizes.iter().max().unwrap();
        Scratch {
            acts,
            zs,
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }
}

fn forward(
    spec: &ModelSpec,
    layout: &[(usize, usize, usize, usize)],
    params: &[f64],
    x: &[f64],
    scratch: &mut Scratch,
) {
    scratch.acts[0].copy_from_slice(x);
    let last = layout.len() - 1;
    for (l, &(w_off, b_off, n_in, n_out)) in layout.iter().enumerate() {
        // Split borrow: activations below l+1 are read-only here.
        let (lower, upper) = scratch.acts.split_at_mut(l + 1);
        let input = &lower[l];
        let z = &mut scratch.zs[l];
        for o in 0..n_out {
            let row = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
            let mut acc = params[b_off + o];
            for (w, a) in row.iter().zip(input.iter()) {
                acc += w * a;
            }
            z[o] = acc;
        }
        let act = &mut upper[0];
        if l == last {
            act.copy_from_slice(z);
        } else {
            for (a, &zv) in act.iter_mut().zip(z.iter()) {
                *a = if zv > 0.0 {
                    zv
                } else {
                    spec.negative_slope * zv
                };
            }
        }
    }
}

/// Per-sample loss and output delta (∂loss/∂z_out), written into
/// `scratch.delta`.
fn output_loss_delta(spec: &ModelSpec, label: usize, scratch: &mut Scratch) -> f64 {
    let z = scratch.zs.last().unwrap();
    match spec.output {
        OutputActivation::Softmax => {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            for (o, d) in scratch.delta.iter_mut().enumerate().take(z.len()) {
                let p = (z[o] - lse).exp();
                *d = p - f64::from(u8::from(o == label));
            }
            lse - z[label]
        }
        OutputActivation::Sigmoid => {
            let z = z[0];
            let y = label as f64;
            let p = 1.0 / (1.0 + (-z).exp());
            scratch.delta[0] = p - y;
            // Stable form of -[y ln p + (1-y) ln(1-p)].
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        }
    }
}

fn backward(
    spec: &ModelSpec,
    layout: &[(usize, usize, usize, usize)],
    params: &[f64],
    scratch: &mut Scratch,
    grad: &mut [f64],
) {
    for (l, &(w_off, b_off, n_in, n_out)) in layout.iter().enumerate().rev() {
        let input = &scratch.acts[l];
        for o in 0..n_out {
            let d = scratch.delta[o];
            let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
            for (g, a) in g_row.iter_mut().zip(input.iter()) {
                *g += d * a;
            }
            grad[b_off + o] += d;
        }
        if l == 0 {
            break;
        }
        // delta_prev = (W^T delta) ∘ leaky'(z_{l-1})
        let z_prev = &scratch.zs[l - 1];
        for (i, dp) in scratch.delta_prev.iter_mut().enumerate().take(n_in) {
            let mut acc = 0.0;
            for o in 0..n_out {
                acc += params[w_off + o * n_in + i] * scratch.delta[o];
            }
            let slope = if z_prev[i] > 0.0 {
                1.0
            } else {
                spec.negative_slope
            };
            *dp = acc * slope;
        }
        std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
    }
}

fn check_shapes(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<()> {
    spec.validate()?;
    if params.dim() != spec.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_dim(),
            got: params.dim(),
        });
    }
    if data.features() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            got: data.features(),
        });
    }
    let classes = spec.class_count();
    if let Some(i) = data.labels().iter().position(|&l| l >= classes) {
        return Err(Error::invalid(
            "labels",
            format!(
                "label {} of sample {i} exceeds the model's {classes} classes",
                data.label(i)
            ),
        ));
    }
    Ok(())
}

/// Mean loss and gradient over the given rows; grad is written (not
/// accumulated) into `grad`.
fn loss_grad_rows(
    spec: &ModelSpec,
    layout: &[(usize, usize, usize, usize)],
    params: &[f64],
    data: &LabeledDataset,
    rows: &[usize],
    scratch: &mut Scratch,
    grad: &mut [f64],
) -> Result<f64> {
    grad.fill(0.0);
    let mut loss_sum = 0.0;
    for &r in rows {
        forward(spec, layout, params, data.row(r), scratch);
        let loss = output_loss_delta(spec, data.label(r), scratch);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { sample: r });
        }
        loss_sum += loss;
        backward(spec, layout, params, scratch, grad);
    }
    let scale = 1.0 / rows.len() as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok(loss_sum * scale)
}

/// Mean cross-entropy over the batch and its exact analytic gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &LabeledDataset,
) -> Result<(f64, ParamVector)> {
    check_shapes(spec, params, batch)?;
    let layout = spec.layout();
    let mut scratch = Scratch::new(spec);
    let mut grad = vec![0.0; spec.param_dim()];
    let rows: Vec<usize> = (0..batch.len()).collect();
    let loss = loss_grad_rows(
        spec,
        &layout,
        params.as_slice(),
        batch,
        &rows,
        &mut scratch,
        &mut grad,
    )?;
    Ok((loss, ParamVector::new(grad)?))
}

/// The per-epoch visit order: a seeded shuffle of the row indices. Always a
/// permutation of 0..n, independent of the data content.
fn epoch_order(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    order.shuffle(rng);
}

/// Multi-epoch mini-batch momentum SGD from `start` over seeded shuffles of
/// the shard. Deterministic given (start, shard, cfg.seed); the momentum
/// buffer starts at zero on every call. The last batch of an epoch may be
/// short and its loss is averaged over its actual size.
pub fn sgd_local_train(
    spec: &ModelSpec,
    start: &ParamVector,
    shard: &LabeledDataset,
    cfg: &TrainingConfig,
) -> Result<ParamVector> {
    check_shapes(spec, start, shard)?;
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(start.clone());
    }

    let layout = spec.layout();
    let d = spec.param_dim();
    let mut scratch = Scratch::new(spec);
    let mut params: Vec<f64> = start.as_slice().to_vec();
    let mut velocity = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        epoch_order(&mut order, &mut rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            loss_grad_rows(
                spec,
                &layout,
                &params,
                shard,
                batch,
                &mut scratch,
                &mut grad,
            )?;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
        }
    }
    ParamVector::new(params)
}

/// Fraction of misclassified test points. Multi-class predictions take the
/// argmax (ties to the lowest class index); binary predictions are class 1
/// iff the sigmoid output is at least 0.5.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, test: &LabeledDataset) -> Result<f64> {
    check_shapes(spec, params, test)?;
    let layout = spec.layout();
    let mut scratch = Scratch::new(spec);
    let mut wrong = 0usize;
    for r in 0..test.len() {
        forward(spec, &layout, params.as_slice(), test.row(r), &mut scratch);
        let z = scratch.zs.last().unwrap();
        let predicted = match spec.output {
            OutputActivation::Softmax => {
                let mut best = 0;
                for (o, &v) in z.iter().enumerate() {
                    if v > z[best] {
                        best = o;
                    }
                }
                best
            }
            // σ(z) >= 0.5 exactly when z >= 0.
            OutputActivation::Sigmoid => usize::from(z[0] >= 0.0),
        };
        if predicted != test.label(r) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / test.len() as f64)
}
