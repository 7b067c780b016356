//! ANN-to-SNN conversion: data-based normalization, QCFS-style and
//! QFFS-style parameter mappings.
//!
//! QCFS and QFFS never touch weights or biases; they only derive thresholds
//! (and, for QFFS, the spike-count cap) from the learned quantization scales.
//! Data-based normalization rescales weights and biases by per-layer
//! activation maxima and fixes all thresholds at 1.

use crate::engine::SchedulePolicy;
use crate::error::{Error, Result};
use crate::math::Mat;
use crate::quantnet::{ActivationStats, Activation, QuantizedAnn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionMode {
    DataNorm,
    Qcfs,
    Qffs,
}

impl ConversionMode {
    pub fn name(&self) -> &'static str {
        match self {
            ConversionMode::DataNorm => "datanorm",
            ConversionMode::Qcfs => "qcfs",
            ConversionMode::Qffs => "qffs",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "datanorm" => Ok(ConversionMode::DataNorm),
            "qcfs" => Ok(ConversionMode::Qcfs),
            "qffs" => Ok(ConversionMode::Qffs),
            other => Err(Error::Format(format!("unknown conversion mode '{other}'"))),
        }
    }
}

/// How QFFS derives thresholds from quantization scales.
///
/// `SScale` (`th = s`, single input presentation) reproduces the quantized
/// ANN exactly once the network quiesces. `QpScale` (`th = Q_P * s`,
/// constant presentation) keeps the larger threshold variant available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    SScale,
    QpScale,
}

impl ThresholdRule {
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdRule::SScale => "s",
            ThresholdRule::QpScale => "qp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "s" => Ok(ThresholdRule::SScale),
            "qp" => Ok(ThresholdRule::QpScale),
            other => Err(Error::Format(format!("unknown threshold rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnnLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
    /// Firing threshold; inert (fixed 1.0) on the output layer, which only
    /// accumulates.
    pub threshold: f64,
}

impl SnnLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone)]
pub struct SnnNetwork {
    pub layers: Vec<SnnLayer>,
    pub mode: ConversionMode,
    /// Cumulative spike cap per neuron; `Some(Q_P)` in QFFS mode, `None`
    /// (unbounded) otherwise.
    pub z_max: Option<u32>,
    pub schedule: SchedulePolicy,
    pub bits: u32,
    /// Calibration temperature inherited from the source ANN.
    pub temperature: f64,
    pub threshold_rule: Option<ThresholdRule>,
}

impl SnnNetwork {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn hidden_neurons(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("SNN has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias length {} != out dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if !layer.weights.is_finite() || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i}: non-finite parameter")));
            }
            if !(layer.threshold.is_finite() && layer.threshold > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: threshold must be positive, got {}",
                    layer.threshold
                )));
            }
            if i + 1 < self.layers.len() && layer.out_dim() != self.layers[i + 1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} out dim {} != layer {} in dim {}",
                    layer.out_dim(),
                    i + 1,
                    self.layers[i + 1].in_dim()
                )));
            }
        }
        match (self.mode, self.z_max) {
            (ConversionMode::Qffs, Some(z)) if z >= 1 => {}
            (ConversionMode::Qffs, _) => {
                return Err(Error::InvalidInput(
                    "QFFS network requires z_max >= 1".into(),
                ))
            }
            (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::InvalidInput(
                    "z_max is only meaningful in QFFS mode".into(),
                ))
            }
        }
        if self.mode == ConversionMode::Qffs && self.threshold_rule.is_none() {
            return Err(Error::InvalidInput(
                "QFFS network requires a threshold rule".into(),
            ));
        }
        Ok(())
    }
}

fn require_hidden(net: &QuantizedAnn, act: Activation, what: &str) -> Result<()> {
    for (i, layer) in net.layers[..net.layers.len() - 1].iter().enumerate() {
        if layer.activation != act {
            return Err(Error::InvalidInput(format!(
                "{what} conversion requires {} hidden layers; layer {i} is {}",
                act.name(),
                layer.activation.name()
            )));
        }
    }
    Ok(())
}

/// Data-based normalization: `W~ = lambda_prev * W / lambda`,
/// `B~ = B / lambda`, threshold 1, with `lambda_0 = 1` for the input.
pub fn to_snn_datanorm(net: &QuantizedAnn, stats: &ActivationStats) -> Result<SnnNetwork> {
    net.validate()?;
    require_hidden(net, Activation::Relu, "data-based normalization")?;
    if stats.lambdas.len() != net.layers.len() {
        return Err(Error::InvalidInput(format!(
            "activation stats cover {} layers, network has {}",
            stats.lambdas.len(),
            net.layers.len()
        )));
    }
    if let Some(bad) = stats.lambdas.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::InvalidInput(format!("non-positive lambda {bad}")));
    }
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut lambda_prev = 1.0;
    for (layer, &lambda) in net.layers.iter().zip(&stats.lambdas) {
        let ratio = lambda_prev / lambda;
        let mut weights = layer.weights.clone();
        for w in weights.data_mut() {
            *w *= ratio;
        }
        let bias: Vec<f64> = layer.bias.iter().map(|b| b / lambda).collect();
        layers.push(SnnLayer {
            weights,
            bias,
            threshold: 1.0,
        });
        lambda_prev = lambda;
    }
    let snn = SnnNetwork {
        layers,
        mode: ConversionMode::DataNorm,
        z_max: None,
        schedule: SchedulePolicy::DATANORM,
        bits: net.bits,
        temperature: net.temperature,
        threshold_rule: None,
    };
    snn.validate()?;
    Ok(snn)
}

/// QCFS mapping: weights and biases unchanged, `th = Q_P * s` per hidden
/// layer, no spike cap, constant input presentation with `u0 = th/2`.
pub fn to_snn_qcfs(net: &QuantizedAnn) -> Result<SnnNetwork> {
    net.validate()?;
    require_hidden(net, Activation::Lsq, "QCFS")?;
    let q_p = net.q_p() as f64;
    let last = net.layers.len() - 1;
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| SnnLayer {
            weights: layer.weights.clone(),
            bias: layer.bias.clone(),
            threshold: if i == last { 1.0 } else { q_p * layer.scale },
        })
        .collect();
    let snn = SnnNetwork {
        layers,
        mode: ConversionMode::Qcfs,
        z_max: None,
        schedule: SchedulePolicy::QCFS,
        bits: net.bits,
        temperature: net.temperature,
        threshold_rule: None,
    };
    snn.validate()?;
    Ok(snn)
}

/// QFFS mapping: weights and biases unchanged, spike cap `Z_max = Q_P`, and
/// thresholds per `rule` (see [`ThresholdRule`]).
pub fn to_snn_qffs(net: &QuantizedAnn, rule: ThresholdRule) -> Result<SnnNetwork> {
    net.validate()?;
    require_hidden(net, Activation::Lsq, "QFFS")?;
    let q_p = net.q_p() as f64;
    let last = net.layers.len() - 1;
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let threshold = if i == last {
                1.0
            } else {
                match rule {
                    ThresholdRule::SScale => layer.scale,
                    ThresholdRule::QpScale => q_p * layer.scale,
                }
            };
            SnnLayer {
                weights: layer.weights.clone(),
                bias: layer.bias.clone(),
                threshold,
            }
        })
        .collect();
    let schedule = match rule {
        ThresholdRule::SScale => SchedulePolicy::SINGLE_SHOT,
        // Literal large-threshold variant keeps constant presentation.
        ThresholdRule::QpScale => SchedulePolicy::QCFS,
    };
    let snn = SnnNetwork {
        layers,
        mode: ConversionMode::Qffs,
        z_max: Some(net.q_p()),
        schedule,
        bits: net.bits,
        temperature: net.temperature,
        threshold_rule: Some(rule),
    };
    snn.validate()?;
    Ok(snn)
}
