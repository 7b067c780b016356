//! Time-stepped simulation of a converted spiking network.
//!
//! Layers are updated in order within each step, so a spike emitted by layer
//! `l-1` at step `t` reaches layer `l` at the same step. The output layer
//! never spikes; it accumulates its input currents and the running sum is the
//! logit vector reported for each step.

use crate::convert::{ConversionMode, SnnNetwork};
use crate::error::{Error, Result};
use crate::math::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum U0Rule {
    Zero,
    HalfTh,
}

impl U0Rule {
    pub fn name(&self) -> &'static str {
        match self {
            U0Rule::Zero => "zero",
            U0Rule::HalfTh => "half_th",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(U0Rule::Zero),
            "half_th" => Ok(U0Rule::HalfTh),
            other => Err(Error::Format(format!("unknown u0 rule '{other}'"))),
        }
    }
}

/// When input and bias currents are presented, and how membrane potentials
/// are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulePolicy {
    pub input_every_step: bool,
    pub bias_every_step: bool,
    pub u0_rule: U0Rule,
}

impl SchedulePolicy {
    pub const DATANORM: SchedulePolicy = SchedulePolicy {
        input_every_step: true,
        bias_every_step: true,
        u0_rule: U0Rule::Zero,
    };

    pub const QCFS: SchedulePolicy = SchedulePolicy {
        input_every_step: true,
        bias_every_step: true,
        u0_rule: U0Rule::HalfTh,
    };

    /// Input and bias presented once at t = 1.
    pub const SINGLE_SHOT: SchedulePolicy = SchedulePolicy {
        input_every_step: false,
        bias_every_step: false,
        u0_rule: U0Rule::HalfTh,
    };

    pub fn input_at(&self, t: usize) -> bool {
        self.input_every_step || t == 1
    }

    pub fn bias_at(&self, t: usize) -> bool {
        self.bias_every_step || t == 1
    }

    /// True when no external current arrives after the first step, so a
    /// spike-free step is a fixed point of the dynamics.
    pub fn single_shot(&self) -> bool {
        !self.input_every_step && !self.bias_every_step
    }

    pub fn initial_potential(&self, th: f64) -> f64 {
        match self.u0_rule {
            U0Rule::Zero => 0.0,
            U0Rule::HalfTh => th / 2.0,
        }
    }
}

/// Mutable state of one spiking layer.
#[derive(Debug, Clone)]
pub struct NeuronLayerState {
    /// Membrane potentials.
    pub u: Vec<f64>,
    /// Last-step spikes in {-1, 0, 1}.
    pub z: Vec<i8>,
    /// Cumulative spike counts Z.
    pub cumulative: Vec<u32>,
}

impl NeuronLayerState {
    pub fn new(n: usize, u0: f64) -> Self {
        NeuronLayerState {
            u: vec![u0; n],
            z: vec![0; n],
            cumulative: vec![0; n],
        }
    }
}

fn check_step_inputs(state: &NeuronLayerState, input: &[f64], th: f64) -> Result<()> {
    if input.len() != state.u.len() {
        return Err(Error::ShapeMismatch(format!(
            "input length {} != layer width {}",
            input.len(),
            state.u.len()
        )));
    }
    if !(th.is_finite() && th > 0.0) {
        return Err(Error::InvalidInput(format!("threshold must be positive, got {th}")));
    }
    if !input.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite input current".into()));
    }
    Ok(())
}

/// Soft-reset integrate-and-fire step: the reset for last step's spike is
/// subtracted while this step's current is added, then the neuron fires iff
/// `u - th > 0` (strictly).
pub fn step_if_softreset(state: &mut NeuronLayerState, input: &[f64], th: f64) -> Result<()> {
    check_step_inputs(state, input, th)?;
    for i in 0..state.u.len() {
        state.u[i] += input[i] - f64::from(state.z[i]) * th;
        if state.u[i] - th > 0.0 {
            state.z[i] = 1;
            state.cumulative[i] += 1;
        } else {
            state.z[i] = 0;
        }
    }
    Ok(())
}

/// Integrate-and-fire step with negative spikes and a cumulative cap:
/// positive spike iff `u > th` and `Z < z_max`, negative spike iff `u < 0`
/// and `Z > 0`. The soft reset is applied within the step.
pub fn step_qffs(state: &mut NeuronLayerState, input: &[f64], th: f64, z_max: u32) -> Result<()> {
    check_step_inputs(state, input, th)?;
    if z_max == 0 {
        return Err(Error::InvalidInput("z_max must be at least 1".into()));
    }
    for i in 0..state.u.len() {
        state.u[i] += input[i];
        let z: i8 = if state.u[i] > th && state.cumulative[i] < z_max {
            1
        } else if state.u[i] < 0.0 && state.cumulative[i] > 0 {
            -1
        } else {
            0
        };
        state.u[i] -= f64::from(z) * th;
        state.cumulative[i] = (state.cumulative[i] as i64 + i64::from(z)) as u32;
        state.z[i] = z;
    }
    Ok(())
}

/// Output neurons only accumulate input currents; they never spike or reset.
pub fn output_accumulate(acc: &mut [f64], input: &[f64]) -> Result<()> {
    if acc.len() != input.len() {
        return Err(Error::ShapeMismatch(format!(
            "accumulator length {} != input length {}",
            acc.len(),
            input.len()
        )));
    }
    if !input.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite input current".into()));
    }
    for (a, &x) in acc.iter_mut().zip(input) {
        *a += x;
    }
    Ok(())
}

/// Output state after one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub spike_events: u64,
}

/// Per-sample simulation record. `steps` holds one record per simulated step
/// up to the termination step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: usize,
    pub steps: Vec<StepRecord>,
    pub termination_step: usize,
}

impl Trajectory {
    pub fn spike_events(&self) -> u64 {
        self.steps.iter().map(|s| s.spike_events).sum()
    }
}

/// Aggregate spike accounting over a batch of runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeStats {
    pub total_events: u64,
    pub samples: usize,
    pub hidden_neurons: usize,
}

impl SpikeStats {
    pub fn spikes_per_neuron_per_inference(&self) -> f64 {
        let denom = self.hidden_neurons * self.samples;
        if denom == 0 {
            0.0
        } else {
            self.total_events as f64 / denom as f64
        }
    }
}

/// Simulate one sample for up to `t_max` steps, stopping early at the first
/// step where `stop(t, logits)` is true. In single-shot schedules the
/// dynamics are additionally frozen once a step emits no spikes (no external
/// current can arrive, so the state is a fixed point); recorded logits repeat
/// from there on while `stop` continues to be evaluated.
pub fn run<F>(
    snn: &SnnNetwork,
    x: &[f64],
    label: usize,
    t_max: usize,
    mut stop: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64]) -> bool,
{
    if t_max < 1 {
        return Err(Error::InvalidInput("t_max must be at least 1".into()));
    }
    if x.len() != snn.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input length {} != network input dim {}",
            x.len(),
            snn.input_dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    snn.validate()?;

    let n_layers = snn.layers.len();
    let n_hidden = n_layers - 1;
    let schedule = snn.schedule;
    let mut states: Vec<NeuronLayerState> = (0..n_hidden)
        .map(|l| {
            let layer = &snn.layers[l];
            NeuronLayerState::new(layer.out_dim(), schedule.initial_potential(layer.threshold))
        })
        .collect();
    let mut acc = vec![0.0; snn.output_dim()];
    let mut currents: Vec<Vec<f64>> = snn.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();
    // Scratch for spike charges z * th of the widest hidden layer.
    let mut charge = vec![0.0; snn.layers.iter().map(|l| l.out_dim()).max().unwrap_or(0)];

    let mut steps: Vec<StepRecord> = Vec::with_capacity(t_max.min(1024));
    let mut quiescent = false;
    let mut termination_step = t_max;

    for t in 1..=t_max {
        let mut events: u64 = 0;
        if !quiescent {
            for l in 0..n_layers {
                let with_bias = schedule.bias_at(t);
                let current = &mut currents[l];
                if l == 0 {
                    if schedule.input_at(t) {
                        snn.layers[0].weights.matvec(x, current);
                    } else {
                        current.fill(0.0);
                    }
                } else {
                    let prev = &states[l - 1];
                    let prev_th = snn.layers[l - 1].threshold;
                    let width = prev.z.len();
                    let any_spike = prev.z.iter().any(|&z| z != 0);
                    if any_spike {
                        for (c, &z) in charge[..width].iter_mut().zip(&prev.z) {
                            *c = f64::from(z) * prev_th;
                        }
                        snn.layers[l].weights.matvec(&charge[..width], current);
                    } else {
                        current.fill(0.0);
                    }
                }
                if with_bias {
                    for (c, b) in current.iter_mut().zip(&snn.layers[l].bias) {
                        *c += b;
                    }
                }

                let step_result = if l < n_hidden {
                    let th = snn.layers[l].threshold;
                    match snn.mode {
                        ConversionMode::DataNorm | ConversionMode::Qcfs => {
                            step_if_softreset(&mut states[l], current, th)
                        }
                        ConversionMode::Qffs => {
                            let z_max = snn.z_max.ok_or_else(|| {
                                Error::InvalidInput("QFFS network without z_max".into())
                            })?;
                            step_qffs(&mut states[l], current, th, z_max)
                        }
                    }
                } else {
                    output_accumulate(&mut acc, current)
                };
                step_result.map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("layer {l}, step {t}: {msg}"))
                    }
                    other => other,
                })?;
                if l < n_hidden {
                    events += states[l].z.iter().filter(|&&z| z != 0).count() as u64;
                }
            }
            if schedule.single_shot() && events == 0 {
                quiescent = true;
            }
        }
        let logits = acc.clone();
        let predicted = argmax(&logits);
        steps.push(StepRecord {
            logits,
            predicted,
            spike_events: events,
        });
        if stop(t, &steps.last().unwrap().logits) {
            termination_step = t;
            break;
        }
    }

    Ok(Trajectory {
        label,
        steps,
        termination_step,
    })
}

/// Map [`run`] over a batch of samples, aggregating spike statistics.
/// Deterministic: samples are processed in iteration order and share only the
/// immutable network.
pub fn run_batch<'a, I, F>(
    snn: &SnnNetwork,
    samples: I,
    t_max: usize,
    stop: F,
) -> Result<(Vec<Trajectory>, SpikeStats)>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
    F: Fn(usize, &[f64]) -> bool,
{
    let mut trajectories = Vec::new();
    let mut total_events: u64 = 0;
    for (i, (x, label)) in samples.into_iter().enumerate() {
        let traj = run(snn, x, label, t_max, |t, z| stop(t, z))
            .map_err(|e| Error::Numeric(format!("sample {i}: {e}")))?;
        total_events += traj.spike_events();
        trajectories.push(traj);
    }
    let stats = SpikeStats {
        total_events,
        samples: trajectories.len(),
        hidden_neurons: snn.hidden_neurons(),
    };
    Ok((trajectories, stats))
}
