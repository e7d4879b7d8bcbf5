//! Floating-point training of the benchmark MLPs, with the optional
//! facet-reducing margin regularizer. Everything here runs in `f64`; the
//! trained parameters are converted once, exactly (every finite float is a
//! dyadic rational), into a [`Network`] for enumeration and verification.
//!
//! The regularizer penalizes samples that sit close to a ReLU boundary
//! hyperplane of their own facet: with `v = a·x + b` the pre-activation of
//! a neuron and `a` its input-space normal, the normalized distance is
//! `|v| / ‖a‖_p` and the penalty is `max(0, 1 - min_k d_k / γ_rb)`.
//! Gradients of the penalty are analytic: the pre-activation term is a
//! backward pass through the activation-masked prefix network, and the
//! norm term uses `‖a‖_p = a·u` with `u` the norm's subgradient, which is
//! itself a masked forward/backward pass with zero biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Architecture, Layer, Network};
use crate::property::lower_half_pixels;
use crate::rat;
use crate::{Error, Result};

/// Which benchmark generated a dataset; decides the data loss and the
/// accuracy definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Regression: target is the exact product of the inputs.
    Multiplication,
    /// Binary classification with ±1 labels on binarized images.
    Perception,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Inputs i.i.d. uniform on `[1/2, 2]^n`; target is the product.
pub fn gen_multiplication(n: usize, count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = (0..n).map(|_| 0.5 + 1.5 * rng.gen::<f64>()).collect();
        targets.push(x.iter().product());
        inputs.push(x);
    }
    Dataset {
        kind: DatasetKind::Multiplication,
        seed,
        inputs,
        targets,
    }
}

/// Binary `side × side` images, label `+1` iff any lower-half pixel is lit.
/// Classes alternate so the dataset is balanced to within one sample.
pub fn gen_perception(side: usize, count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower = lower_half_pixels(side);
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        let positive = i % 2 == 1;
        let mut img: Vec<f64> = (0..side * side)
            .map(|_| if rng.gen::<f64>() < 0.35 { 1.0 } else { 0.0 })
            .collect();
        if positive {
            if lower.iter().all(|&p| img[p] == 0.0) {
                img[lower[rng.gen_range(0..lower.len())]] = 1.0;
            }
        } else {
            for &p in &lower {
                img[p] = 0.0;
            }
        }
        targets.push(if positive { 1.0 } else { -1.0 });
        inputs.push(img);
    }
    Dataset {
        kind: DatasetKind::Perception,
        seed,
        inputs,
        targets,
    }
}

/// The p-norm applied to boundary normals in the margin penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PNorm {
    One,
    Two,
    Inf,
}

impl PNorm {
    pub fn eval(self, a: &[f64]) -> f64 {
        match self {
            PNorm::One => a.iter().map(|v| v.abs()).sum(),
            PNorm::Two => a.iter().map(|v| v * v).sum::<f64>().sqrt(),
            PNorm::Inf => a.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// A subgradient `u` with `a·u = ‖a‖_p`. Ties in the ∞-norm argmax
    /// resolve to the lowest index.
    fn subgradient(self, a: &[f64], norm: f64) -> Vec<f64> {
        match self {
            PNorm::One => a.iter().map(|v| v.signum()).collect(),
            PNorm::Two => a.iter().map(|v| v / norm).collect(),
            PNorm::Inf => {
                let best = a
                    .iter()
                    .enumerate()
                    .max_by(|(i, x), (j, y)| {
                        x.abs()
                            .partial_cmp(&y.abs())
                            .unwrap()
                            .then(j.cmp(i))
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                let mut u = vec![0.0; a.len()];
                u[best] = a[best].signum();
                u
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmrConfig {
    pub gamma_rb: f64,
    pub p: PNorm,
    /// λ blending the mean penalty into the loss.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub has_relu: bool,
}

/// A float twin of [`Network`]: same shapes, same tie-active ReLU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub input_dim: usize,
    pub layers: Vec<MlpLayer>,
}

/// Per-sample forward traces reused by the backward passes.
struct Trace {
    /// `inputs[l]` is the input of layer `l`; last entry is the output.
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    /// ReLU masks per layer (empty for the affine head).
    masks: Vec<Vec<bool>>,
}

impl Mlp {
    /// Seeded uniform `[-1/√fan_in, 1/√fan_in]` initialization of a named
    /// architecture (hidden ReLU layers plus the width-1 affine head).
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut fan_in = arch.input_dim;
        let widths: Vec<(usize, bool)> = arch
            .hidden
            .iter()
            .map(|&w| (w, true))
            .chain(std::iter::once((arch.output_dim(), false)))
            .collect();
        for (layer_idx, (width, has_relu)) in widths.into_iter().enumerate() {
            let s = 1.0 / (fan_in as f64).sqrt();
            // Deeper hidden layers see nonnegative ReLU outputs, so
            // nonnegative weights plus a positive bias guarantee every
            // neuron starts active; a dead width-1 bottleneck never
            // recovers. The first layer stays sign-symmetric.
            let lo = if layer_idx == 0 || !has_relu { -s } else { 0.0 };
            let weights = (0..width)
                .map(|_| (0..fan_in).map(|_| lo + (s - lo) * rng.gen::<f64>()).collect())
                .collect();
            let bias = (0..width).map(|_| 0.1 + 0.1 * rng.gen::<f64>()).collect();
            layers.push(MlpLayer {
                weights,
                bias,
                has_relu,
            });
            fan_in = width;
        }
        Mlp {
            input_dim: arch.input_dim,
            layers,
        }
    }

    pub fn from_network(net: &Network) -> Self {
        Mlp {
            input_dim: net.input_dim(),
            layers: net
                .layers()
                .iter()
                .map(|l| MlpLayer {
                    weights: l
                        .weights
                        .iter()
                        .map(|r| r.iter().map(rat::to_f64).collect())
                        .collect(),
                    bias: l.bias.iter().map(rat::to_f64).collect(),
                    has_relu: l.has_relu,
                })
                .collect(),
        }
    }

    /// Exact dyadic conversion of every parameter; fails only on
    /// non-finite values.
    pub fn to_network(&self) -> Result<Network> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    weights: l
                        .weights
                        .iter()
                        .map(|r| r.iter().map(|&w| rat::from_f64(w)).collect())
                        .collect::<Result<_>>()?,
                    bias: l.bias.iter().map(|&b| rat::from_f64(b)).collect::<Result<_>>()?,
                    has_relu: l.has_relu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(self.input_dim, layers)
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.trace(x).inputs.last().unwrap()[0]
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = vec![x.to_vec()];
        let mut preacts = Vec::new();
        let mut masks = Vec::new();
        for layer in &self.layers {
            let cur = inputs.last().unwrap();
            let pre: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| row.iter().zip(cur).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            let (out, mask) = if layer.has_relu {
                let mask: Vec<bool> = pre.iter().map(|&v| v >= 0.0).collect();
                let out = pre
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                (out, mask)
            } else {
                (pre.clone(), Vec::new())
            };
            preacts.push(pre);
            masks.push(mask);
            inputs.push(out);
        }
        Trace {
            inputs,
            preacts,
            masks,
        }
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Grad {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<Vec<f64>>,
}

impl Grad {
    pub fn zero_like(mlp: &Mlp) -> Self {
        Grad {
            weights: mlp
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|r| vec![0.0; r.len()]).collect())
                .collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// Accumulates `scale · ∂(delta-seeded scalar)/∂θ` for the prefix network
/// `0..=top`, where `delta` is the adjoint of layer `top`'s pre-activation
/// and `inputs` carries each layer's forward input. With `with_bias` off,
/// only weight gradients accumulate (used for the norm term, which does
/// not depend on biases).
fn backprop_prefix(
    mlp: &Mlp,
    inputs: &[Vec<f64>],
    masks: &[Vec<bool>],
    top: usize,
    mut delta: Vec<f64>,
    with_bias: bool,
    scale: f64,
    grad: &mut Grad,
) {
    for l in (0..=top).rev() {
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (i, v) in inputs[l].iter().enumerate() {
                grad.weights[l][j][i] += scale * d * v;
            }
            if with_bias {
                grad.bias[l][j] += scale * d;
            }
        }
        if l == 0 {
            break;
        }
        let layer = &mlp.layers[l];
        let prev_dim = inputs[l].len();
        let mut next = vec![0.0; prev_dim];
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (i, nx) in next.iter_mut().enumerate() {
                *nx += d * layer.weights[j][i];
            }
        }
        if mlp.layers[l - 1].has_relu {
            for (nx, &m) in next.iter_mut().zip(&masks[l - 1]) {
                if !m {
                    *nx = 0.0;
                }
            }
        }
        delta = next;
    }
}

/// The boundary nearest to a traced sample, in normalized distance.
struct NearestBoundary {
    layer: usize,
    neuron: usize,
    preact: f64,
    norm: f64,
    /// Input-space normal of the neuron's hyperplane on this facet.
    normal: Vec<f64>,
    distance: f64,
}

fn nearest_boundary(mlp: &Mlp, trace: &Trace, p: PNorm) -> Option<NearestBoundary> {
    let mut jac: Vec<Vec<f64>> = (0..mlp.input_dim)
        .map(|i| {
            let mut e = vec![0.0; mlp.input_dim];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut best: Option<NearestBoundary> = None;
    for (l, layer) in mlp.layers.iter().enumerate() {
        let pre_jac: Vec<Vec<f64>> = layer
            .weights
            .iter()
            .map(|row| {
                let mut a = vec![0.0; mlp.input_dim];
                for (w, jrow) in row.iter().zip(&jac) {
                    if *w == 0.0 {
                        continue;
                    }
                    for (ai, ji) in a.iter_mut().zip(jrow) {
                        *ai += w * ji;
                    }
                }
                a
            })
            .collect();
        if layer.has_relu {
            for (j, a) in pre_jac.iter().enumerate() {
                let norm = p.eval(a);
                if norm == 0.0 {
                    continue; // constant pre-activation bounds no region
                }
                let v = trace.preacts[l][j];
                let d = v.abs() / norm;
                if best.as_ref().is_none_or(|b| d < b.distance) {
                    best = Some(NearestBoundary {
                        layer: l,
                        neuron: j,
                        preact: v,
                        norm,
                        normal: a.clone(),
                        distance: d,
                    });
                }
            }
            jac = pre_jac
                .into_iter()
                .zip(&trace.masks[l])
                .map(|(a, &m)| if m { a } else { vec![0.0; mlp.input_dim] })
                .collect();
        } else {
            jac = pre_jac;
        }
    }
    best
}

/// The hinge penalty `max(0, 1 - min_k d_k / γ_rb)` at one sample.
pub fn mmr_penalty(mlp: &Mlp, sample: &[f64], cfg: &MmrConfig) -> f64 {
    let trace = mlp.trace(sample);
    match nearest_boundary(mlp, &trace, cfg.p) {
        Some(b) => (1.0 - b.distance / cfg.gamma_rb).max(0.0),
        None => 0.0,
    }
}

/// Adds `scale · ∂penalty/∂θ` at one sample. The distance splits as
/// `d = |v| / ‖a‖`, giving two prefix backward passes: one for `v` (with
/// biases) and one for `‖a‖ = a·u` (weights only, input `u`, zero biases).
fn mmr_grad(mlp: &Mlp, trace: &Trace, cfg: &MmrConfig, scale: f64, grad: &mut Grad) -> f64 {
    let Some(b) = nearest_boundary(mlp, trace, cfg.p) else {
        return 0.0;
    };
    let penalty = (1.0 - b.distance / cfg.gamma_rb).max(0.0);
    if penalty == 0.0 {
        return 0.0;
    }
    let dim = mlp.layers[b.layer].bias.len();
    let seed = |k: usize| {
        let mut e = vec![0.0; dim];
        e[b.neuron] = k as f64; // reused with k = 1
        e
    };
    // d/dθ of |v| / ‖a‖: sign(v)·v' / ‖a‖  -  |v| ‖a‖' / ‖a‖².
    let outer = -scale / cfg.gamma_rb;
    backprop_prefix(
        mlp,
        &trace.inputs,
        &trace.masks,
        b.layer,
        seed(1),
        true,
        outer * b.preact.signum() / b.norm,
        grad,
    );
    // Forward the subgradient direction u through the masked prefix with
    // zero biases; its pre-activation at the chosen neuron is a·u = ‖a‖.
    let u = cfg.p.subgradient(&b.normal, b.norm);
    let mut dir_inputs = vec![u];
    for (l, layer) in mlp.layers.iter().enumerate().take(b.layer) {
        let cur = dir_inputs.last().unwrap();
        let mut out: Vec<f64> = layer
            .weights
            .iter()
            .map(|row| row.iter().zip(cur).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        if layer.has_relu {
            for (o, &m) in out.iter_mut().zip(&trace.masks[l]) {
                if !m {
                    *o = 0.0;
                }
            }
        }
        dir_inputs.push(out);
    }
    backprop_prefix(
        mlp,
        &dir_inputs,
        &trace.masks,
        b.layer,
        seed(1),
        false,
        outer * (-b.preact.abs() / (b.norm * b.norm)),
        grad,
    );
    penalty
}

fn data_loss_and_delta(kind: DatasetKind, output: f64, target: f64) -> (f64, f64) {
    match kind {
        DatasetKind::Multiplication => {
            let e = output - target;
            (e * e, 2.0 * e)
        }
        DatasetKind::Perception => {
            // squared hinge max(0, 1 - t·f)²
            let m = 1.0 - target * output;
            if m > 0.0 {
                (m * m, -2.0 * m * target)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Mean objective over the indexed samples: data loss plus
/// `weight · penalty`. Used directly by finite-difference checks.
pub fn total_loss(
    mlp: &Mlp,
    dataset: &Dataset,
    indices: &[usize],
    mmr: Option<&MmrConfig>,
) -> f64 {
    let mut sum = 0.0;
    for &i in indices {
        let out = mlp.forward(&dataset.inputs[i]);
        sum += data_loss_and_delta(dataset.kind, out, dataset.targets[i]).0;
        if let Some(cfg) = mmr {
            sum += cfg.weight * mmr_penalty(mlp, &dataset.inputs[i], cfg);
        }
    }
    sum / indices.len() as f64
}

/// Mean objective and its full parameter gradient over the indexed
/// samples. Returns `(loss, mean data loss, mean penalty, grad)`.
pub fn loss_and_grad(
    mlp: &Mlp,
    dataset: &Dataset,
    indices: &[usize],
    mmr: Option<&MmrConfig>,
) -> (f64, f64, f64, Grad) {
    let mut grad = Grad::zero_like(mlp);
    let scale = 1.0 / indices.len() as f64;
    let mut data_sum = 0.0;
    let mut pen_sum = 0.0;
    for &i in indices {
        let trace = mlp.trace(&dataset.inputs[i]);
        let out = trace.inputs.last().unwrap()[0];
        let (loss, delta) = data_loss_and_delta(dataset.kind, out, dataset.targets[i]);
        data_sum += loss;
        if delta != 0.0 {
            backprop_prefix(
                mlp,
                &trace.inputs,
                &trace.masks,
                mlp.layers.len() - 1,
                vec![delta],
                true,
                scale,
                &mut grad,
            );
        }
        if let Some(cfg) = mmr {
            pen_sum += mmr_grad(mlp, &trace, cfg, scale * cfg.weight, &mut grad);
        }
    }
    let data = data_sum * scale;
    let pen = pen_sum * scale;
    let total = data + mmr.map_or(0.0, |c| c.weight * pen);
    (total, data, pen, grad)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub mmr: Option<MmrConfig>,
}

/// One row of the metrics CSV.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_mmr: f64,
}

pub fn metrics_to_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,accuracy,mean_mmr_penalty\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch, m.loss, m.accuracy, m.mean_mmr
        ));
    }
    out
}

pub const DEFAULT_ACCURACY_TOL: f64 = 0.05;

/// Fraction of samples the float network gets right: relative error within
/// `tol` for multiplication, sign agreement for perception.
pub fn accuracy_mlp(mlp: &Mlp, dataset: &Dataset, tol: f64) -> Result<f64> {
    if dataset.inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut good = 0usize;
    for (x, &t) in dataset.inputs.iter().zip(&dataset.targets) {
        let y = mlp.forward(x);
        let ok = match dataset.kind {
            DatasetKind::Multiplication => (y - t).abs() <= tol * t.abs(),
            DatasetKind::Perception => (y >= 0.0) == (t >= 0.0),
        };
        good += ok as usize;
    }
    Ok(good as f64 / dataset.inputs.len() as f64)
}

/// [`accuracy_mlp`] on an exact network, evaluated in floating point.
pub fn accuracy(net: &Network, dataset: &Dataset, tol: f64) -> Result<f64> {
    accuracy_mlp(&Mlp::from_network(net), dataset, tol)
}

/// Seeded mini-batch gradient descent. Returns the exact-rational export
/// of the trained parameters together with the per-epoch metrics.
pub fn train(
    arch: &Architecture,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, Mlp, Vec<EpochMetrics>)> {
    if dataset.inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut mlp = Mlp::init(arch, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let n = dataset.inputs.len();
    let batch = cfg.batch.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the run's own stream keeps training
        // reproducible bit for bit.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        // Fixed schedule: linear warmup over the first 5% of epochs (big
        // early errors through a narrow layer can kill its ReLUs for
        // good), then cosine decay to 1% to polish past the
        // constant-step noise floor.
        let t = epoch as f64 / cfg.epochs as f64;
        let warmup = (cfg.epochs / 20).max(1);
        let lr = if epoch < warmup {
            cfg.lr * (epoch + 1) as f64 / warmup as f64
        } else {
            let s = (t * std::f64::consts::PI).cos() * 0.5 + 0.5;
            cfg.lr * (0.01 + 0.99 * s)
        };
        let mut loss_sum = 0.0;
        let mut pen_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let (loss, _, pen, mut grad) = loss_and_grad(&mlp, dataset, chunk, cfg.mmr.as_ref());
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {loss} at epoch {epoch}"
                )));
            }
            loss_sum += loss;
            pen_sum += pen;
            batches += 1;
            // Clip the global gradient norm; one outlier batch can
            // otherwise flip a bottleneck neuron permanently inactive.
            let sq: f64 = grad
                .weights
                .iter()
                .flatten()
                .flatten()
                .chain(grad.bias.iter().flatten())
                .map(|g| g * g)
                .sum();
            let clip = 5.0;
            if sq > clip * clip {
                let f = clip / sq.sqrt();
                for g in grad
                    .weights
                    .iter_mut()
                    .flatten()
                    .flatten()
                    .chain(grad.bias.iter_mut().flatten())
                {
                    *g *= f;
                }
            }
            for (layer, (gw, gb)) in mlp
                .layers
                .iter_mut()
                .zip(grad.weights.iter().zip(&grad.bias))
            {
                for (row, grow) in layer.weights.iter_mut().zip(gw) {
                    for (w, g) in row.iter_mut().zip(grow) {
                        *w -= lr * g;
                    }
                }
                for (b, g) in layer.bias.iter_mut().zip(gb) {
                    *b -= lr * g;
                }
            }
        }
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: accuracy_mlp(&mlp, dataset, DEFAULT_ACCURACY_TOL)?,
            mean_mmr: pen_sum / batches as f64,
        });
    }
    let net = mlp.to_network()?;
    Ok((net, mlp, metrics))
}
