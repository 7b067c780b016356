//! Dense feedforward ANN with learned-step-size (LSQ) activation quantization.
//!
//! Provides the quantization operator and its straight-through-estimator
//! gradients, full/quantized forward passes, SGD training of weights, biases
//! and quantization scales, and the activation statistics consumed by the
//! conversion module.

use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::math::{argmax, log_sum_exp, percentile, Mat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Floor for activation statistics of layers that never activate.
pub const STATS_EPSILON: f64 = 1e-6;

/// Floor keeping learned quantization scales positive during training.
const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Lsq,
    Linear,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Lsq => "lsq",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "lsq" => Ok(Activation::Lsq),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Format(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Quantization step; meaningful only when `activation == Lsq`.
    pub scale: f64,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.bias.len() != self.out_dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer {index}: bias length {} != out dim {}",
                self.bias.len(),
                self.out_dim()
            )));
        }
        if !self.weights.is_finite() || !self.bias.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "layer {index}: non-finite parameter"
            )));
        }
        if self.activation == Activation::Lsq && !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "layer {index}: LSQ scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Feedforward network with quantized hidden activations and a full-precision
/// (linear) output layer.
#[derive(Debug, Clone)]
pub struct QuantizedAnn {
    pub layers: Vec<DenseLayer>,
    /// Activation bit width `b`; the unsigned clip range is `[0, 2^b - 1]`.
    pub bits: u32,
    /// Softmax calibration temperature, fitted post-training; defaults to 1.
    pub temperature: f64,
}

impl QuantizedAnn {
    pub fn new(layers: Vec<DenseLayer>, bits: u32) -> Result<Self> {
        let net = QuantizedAnn {
            layers,
            bits,
            temperature: 1.0,
        };
        net.validate()?;
        Ok(net)
    }

    /// Randomly initialized network: He-normal weights, zero biases, unit
    /// scales. `hidden` selects the hidden-layer activation; the output layer
    /// is always linear.
    pub fn random(arch: &[usize], bits: u32, hidden: Activation, seed: u64) -> Result<Self> {
        if arch.len() < 2 {
            return Err(Error::InvalidInput(
                "architecture needs at least input and output widths".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.len() - 1);
        for (l, pair) in arch.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::InvalidInput(format!("weight init: {e}")))?;
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let activation = if l + 2 == arch.len() { Activation::Linear } else { hidden };
            layers.push(DenseLayer {
                weights: Mat::from_vec(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
                activation,
                scale: 1.0,
            });
        }
        QuantizedAnn::new(layers, bits)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        if self.bits < 1 || self.bits > 16 {
            return Err(Error::InvalidInput(format!(
                "bit width {} out of range [1, 16]",
                self.bits
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if i + 1 < self.layers.len() {
                let next = &self.layers[i + 1];
                if layer.out_dim() != next.in_dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i} out dim {} != layer {} in dim {}",
                        layer.out_dim(),
                        i + 1,
                        next.in_dim()
                    )));
                }
            }
        }
        if self.layers.last().unwrap().activation != Activation::Linear {
            return Err(Error::InvalidInput(
                "output layer must be linear (full precision)".into(),
            ));
        }
        Ok(())
    }

    /// Lower clip bound `Q_N` (0 for unsigned activations).
    pub fn q_n(&self) -> u32 {
        0
    }

    /// Upper clip bound `Q_P = 2^b - 1`.
    pub fn q_p(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Total units across hidden (non-output) layers.
    pub fn hidden_neurons(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .sum()
    }

    /// Copy of the network with every LSQ hidden layer relabelled ReLU: the
    /// full-precision view used by data-based normalization.
    pub fn as_relu(&self) -> Self {
        let mut net = self.clone();
        for layer in &mut net.layers {
            if layer.activation == Activation::Lsq {
                layer.activation = Activation::Relu;
            }
        }
        net
    }
}

/// Per-layer activation maxima (or percentiles) over a calibration set.
#[derive(Debug, Clone)]
pub struct ActivationStats {
    pub lambdas: Vec<f64>,
    pub percentile: f64,
    /// True for layers whose activations were all zero (lambda floored).
    pub warnings: Vec<bool>,
}

/// `s * round(clip(v/s, -Q_N, Q_P))` with round-half-away-from-zero.
pub fn lsq_quantize(v: f64, s: f64, q_n: u32, q_p: u32) -> Result<f64> {
    check_lsq_inputs(v, s, q_n, q_p)?;
    Ok(lsq_quantize_raw(v, s, q_n, q_p))
}

#[inline]
pub(crate) fn lsq_quantize_raw(v: f64, s: f64, q_n: u32, q_p: u32) -> f64 {
    let ratio = (v / s).clamp(-(q_n as f64), q_p as f64);
    s * ratio.round()
}

/// Straight-through-estimator partials of the quantizer: `(d_v, d_s)`.
///
/// `d_v` gates the activation gradient (1 strictly inside the clip range,
/// 0 outside); `d_s` is `round(v/s) - v/s` inside, `-Q_N` below and `Q_P`
/// above.
pub fn lsq_backward(v: f64, s: f64, q_n: u32, q_p: u32) -> Result<(f64, f64)> {
    check_lsq_inputs(v, s, q_n, q_p)?;
    Ok(lsq_backward_raw(v, s, q_n, q_p))
}

#[inline]
pub(crate) fn lsq_backward_raw(v: f64, s: f64, q_n: u32, q_p: u32) -> (f64, f64) {
    let ratio = v / s;
    if ratio <= -(q_n as f64) {
        (0.0, -(q_n as f64))
    } else if ratio >= q_p as f64 {
        (0.0, q_p as f64)
    } else {
        (1.0, ratio.round() - ratio)
    }
}

fn check_lsq_inputs(v: f64, s: f64, q_n: u32, q_p: u32) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite value {v}")));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidInput(format!("scale must be positive, got {s}")));
    }
    if q_p == 0 {
        return Err(Error::InvalidInput("Q_P must be at least 1".into()));
    }
    let _ = q_n;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Hidden layers apply ReLU (full-precision view).
    Full,
    /// Hidden LSQ layers apply the quantizer.
    Quantized,
}

/// Result of a forward pass: final logits plus every layer's post-activation
/// output (the last entry equals `logits`).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub activations: Vec<Vec<f64>>,
}

pub fn ann_forward(net: &QuantizedAnn, x: &[f64], mode: ForwardMode) -> Result<ForwardPass> {
    let (_, activations) = forward_with_pre(net, x, mode)?;
    let logits = activations.last().cloned().unwrap_or_default();
    Ok(ForwardPass { logits, activations })
}

/// Forward pass keeping pre-activations; shared by training and scale init.
fn forward_with_pre(
    net: &QuantizedAnn,
    x: &[f64],
    mode: ForwardMode,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if x.len() != net.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input length {} != network input dim {}",
            x.len(),
            net.input_dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    let (q_n, q_p) = (net.q_n(), net.q_p());
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post = Vec::with_capacity(net.layers.len());
    let mut current: &[f64] = x;
    for (l, layer) in net.layers.iter().enumerate() {
        let mut a = vec![0.0; layer.out_dim()];
        layer.weights.matvec(current, &mut a);
        for (ai, bi) in a.iter_mut().zip(&layer.bias) {
            *ai += bi;
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pre-activation in layer {l}")));
        }
        let y = apply_activation(&a, layer, mode, q_n, q_p);
        pre.push(a);
        post.push(y);
        current = post.last().unwrap();
    }
    Ok((pre, post))
}

fn apply_activation(
    a: &[f64],
    layer: &DenseLayer,
    mode: ForwardMode,
    q_n: u32,
    q_p: u32,
) -> Vec<f64> {
    match (layer.activation, mode) {
        (Activation::Linear, _) => a.to_vec(),
        (Activation::Relu, _) | (Activation::Lsq, ForwardMode::Full) => {
            a.iter().map(|&v| v.max(0.0)).collect()
        }
        (Activation::Lsq, ForwardMode::Quantized) => a
            .iter()
            .map(|&v| lsq_quantize_raw(v, layer.scale, q_n, q_p))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.01,
            seed: 1,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 2.5e-5,
            lr_decay: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

struct Gradients {
    w: Vec<Mat>,
    b: Vec<Vec<f64>>,
    s: Vec<f64>,
}

impl Gradients {
    fn zeros_like(net: &QuantizedAnn) -> Self {
        Gradients {
            w: net
                .layers
                .iter()
                .map(|l| Mat::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
            s: vec![0.0; net.layers.len()],
        }
    }

    fn reset(&mut self) {
        for m in &mut self.w {
            m.data_mut().fill(0.0);
        }
        for b in &mut self.b {
            b.fill(0.0);
        }
        self.s.fill(0.0);
    }
}

/// Accumulate the cross-entropy gradient of one sample into `grads`.
/// Returns the sample loss. Quantized hidden layers use STE partials for
/// both the pass-through activation gradient and the scale gradient.
fn accumulate_sample(
    net: &QuantizedAnn,
    x: &[f64],
    label: usize,
    grads: &mut Gradients,
) -> Result<f64> {
    let (pre, post) = forward_with_pre(net, x, ForwardMode::Quantized)?;
    let n_layers = net.layers.len();
    let logits = &post[n_layers - 1];
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[label];

    // delta = dL/d(pre-activation) of the current layer.
    let mut delta: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    delta[label] -= 1.0;

    let (q_n, q_p) = (net.q_n(), net.q_p());
    for l in (0..n_layers).rev() {
        let input: &[f64] = if l == 0 { x } else { &post[l - 1] };
        grads.w[l].add_outer(&delta, input, 1.0);
        for (gb, d) in grads.b[l].iter_mut().zip(&delta) {
            *gb += d;
        }
        if l == 0 {
            break;
        }
        let mut upstream = vec![0.0; net.layers[l].in_dim()];
        net.layers[l].weights.matvec_t(&delta, &mut upstream);
        let prev = &net.layers[l - 1];
        match prev.activation {
            Activation::Linear => delta = upstream,
            Activation::Relu => {
                delta = upstream
                    .iter()
                    .zip(&pre[l - 1])
                    .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                    .collect();
            }
            Activation::Lsq => {
                let mut gated = Vec::with_capacity(upstream.len());
                for (&g, &a) in upstream.iter().zip(&pre[l - 1]) {
                    let (dv, ds) = lsq_backward_raw(a, prev.scale, q_n, q_p);
                    grads.s[l - 1] += g * ds;
                    gated.push(g * dv);
                }
                delta = gated;
            }
        }
    }
    Ok(loss)
}

/// SGD with momentum over weights, biases and LSQ scales. Deterministic for a
/// fixed seed. Weight decay applies to weights only.
pub fn train(net: &mut QuantizedAnn, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.len() == 0 {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::InvalidInput(format!("learning rate {} invalid", cfg.lr)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    net.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grads = Gradients::zeros_like(net);
    let mut vel = Gradients::zeros_like(net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = data.sample(i);
                batch_loss += accumulate_sample(net, x, y, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            for (l, layer) in net.layers.iter_mut().enumerate() {
                // v = momentum*v + (g/batch + wd*w); w -= lr*v
                let vw = vel.w[l].data_mut();
                let gw = grads.w[l].data();
                let w = layer.weights.data_mut();
                for ((v, &g), wi) in vw.iter_mut().zip(gw).zip(w.iter_mut()) {
                    *v = cfg.momentum * *v + g * inv + cfg.weight_decay * *wi;
                    *wi -= lr * *v;
                }
                for ((v, &g), bi) in vel.b[l]
                    .iter_mut()
                    .zip(&grads.b[l])
                    .zip(layer.bias.iter_mut())
                {
                    *v = cfg.momentum * *v + g * inv;
                    *bi -= lr * *v;
                }
                if layer.activation == Activation::Lsq {
                    vel.s[l] = cfg.momentum * vel.s[l] + grads.s[l] * inv;
                    layer.scale = (layer.scale - lr * vel.s[l]).max(MIN_SCALE);
                }
            }
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainReport { epoch_losses })
}

/// Initialize LSQ scales from one warm-up batch: `s = 2*mean(|a|)/sqrt(Q_P)`
/// over the full-precision pre-activations of each quantized layer.
pub fn init_scales(net: &mut QuantizedAnn, data: &Dataset, batch_size: usize) -> Result<()> {
    if data.len() == 0 {
        return Err(Error::InvalidInput("scale init needs a nonempty dataset".into()));
    }
    let n = batch_size.min(data.len()).max(1);
    let mut sums = vec![0.0f64; net.layers.len()];
    let mut counts = vec![0usize; net.layers.len()];
    for i in 0..n {
        let (x, _) = data.sample(i);
        let (pre, _) = forward_with_pre(net, x, ForwardMode::Full)?;
        for (l, a) in pre.iter().enumerate() {
            sums[l] += a.iter().map(|v| v.abs()).sum::<f64>();
            counts[l] += a.len();
        }
    }
    let q_p = net.q_p() as f64;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        if layer.activation == Activation::Lsq {
            let mean = sums[l] / counts[l].max(1) as f64;
            layer.scale = (2.0 * mean / q_p.sqrt()).max(MIN_SCALE);
        }
    }
    Ok(())
}

/// Classification accuracy of the quantized forward pass over a dataset.
pub fn accuracy(net: &QuantizedAnn, data: &Dataset, mode: ForwardMode) -> Result<f64> {
    if data.len() == 0 {
        return Err(Error::InvalidInput("accuracy over empty dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        let out = ann_forward(net, x, mode)?;
        if argmax(&out.logits) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Per-layer percentile of the positive activation distribution under the
/// full-precision forward pass. `percentile = 100` takes the maximum; layers
/// with no positive activations report `STATS_EPSILON` and a warning flag.
pub fn collect_stats(net: &QuantizedAnn, data: &Dataset, pct: f64) -> Result<ActivationStats> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidInput(format!(
            "percentile {pct} outside (0, 100]"
        )));
    }
    if data.len() == 0 {
        return Err(Error::InvalidInput("stats over empty dataset".into()));
    }
    let mut positives: Vec<Vec<f64>> = vec![Vec::new(); net.layers.len()];
    for i in 0..data.len() {
        let (x, _) = data.sample(i);
        let pass = ann_forward(net, x, ForwardMode::Full)?;
        for (l, acts) in pass.activations.iter().enumerate() {
            positives[l].extend(acts.iter().copied().filter(|&v| v > 0.0));
        }
    }
    let mut lambdas = Vec::with_capacity(net.layers.len());
    let mut warnings = Vec::with_capacity(net.layers.len());
    for layer_vals in &mut positives {
        if layer_vals.is_empty() {
            lambdas.push(STATS_EPSILON);
            warnings.push(true);
        } else {
            let lambda = percentile(layer_vals, pct)?;
            lambdas.push(lambda.max(STATS_EPSILON));
            warnings.push(false);
        }
    }
    Ok(ActivationStats {
        lambdas,
        percentile: pct,
        warnings,
    })
}
