//! Everything downstream of the logits: scaled softmax confidence, divisor
//! selection, temperature fitting, the termination agent, Pareto-front
//! threshold calibration, and the ground-truth oracle bound.

use crate::convert::ConversionMode;
use crate::engine::{SchedulePolicy, Trajectory};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Runtime termination agent parameters. The softmax divisor is the product
/// `alpha * tau`: the logit scale factor composed with the calibration
/// temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub th_c: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl AgentConfig {
    pub fn new(th_c: f64, alpha: f64, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&th_c) || !th_c.is_finite() {
            return Err(Error::InvalidInput(format!(
                "confidence threshold {th_c} outside [0, 1]"
            )));
        }
        if !(alpha.is_finite() && alpha > 0.0) || !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha ({alpha}) and tau ({tau}) must be positive"
            )));
        }
        Ok(AgentConfig { th_c, alpha, tau })
    }

    pub fn divisor(&self) -> f64 {
        self.alpha * self.tau
    }
}

/// Maximum softmax probability of `logits / divisor`, computed with max
/// subtraction.
pub fn confidence(logits: &[f64], divisor: f64) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(
            "confidence needs at least 2 classes".into(),
        ));
    }
    if !(divisor.is_finite() && divisor > 0.0) {
        return Err(Error::InvalidInput(format!(
            "softmax divisor must be positive, got {divisor}"
        )));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| ((z - m) / divisor).exp()).sum();
    Ok(1.0 / sum)
}

/// Confidence of every recorded step of a trajectory.
pub fn confidence_sequence(traj: &Trajectory, divisor: f64) -> Result<Vec<f64>> {
    traj.steps
        .iter()
        .map(|s| confidence(&s.logits, divisor))
        .collect()
}

/// Logit scale factor aligning the SNN confidence at `T` with the source
/// ANN: `2^b - 1` for constant-presentation QFFS, the simulation length for
/// QCFS and data-based normalization, and 1 for single-shot QFFS whose
/// accumulated logits already sit on the ANN scale.
pub fn select_alpha(
    mode: ConversionMode,
    bits: u32,
    t_max: usize,
    schedule: &SchedulePolicy,
) -> Result<f64> {
    if bits < 1 {
        return Err(Error::InvalidInput("bit width must be at least 1".into()));
    }
    if t_max < 1 {
        return Err(Error::InvalidInput("t_max must be at least 1".into()));
    }
    Ok(match mode {
        ConversionMode::Qffs => {
            if schedule.single_shot() {
                1.0
            } else {
                ((1u32 << bits) - 1) as f64
            }
        }
        ConversionMode::Qcfs | ConversionMode::DataNorm => t_max as f64,
    })
}

/// Fit the calibration temperature by grid search over
/// `tau in {0.05 * 1.05^k} ∩ [0.05, 20]` (the endpoint 20 is included),
/// minimizing mean negative log-likelihood; ties resolve to the smallest tau.
pub fn fit_temperature(val_logits: &[(Vec<f64>, usize)]) -> Result<f64> {
    if val_logits.is_empty() {
        return Err(Error::InvalidInput(
            "temperature fit needs validation logits".into(),
        ));
    }
    for (z, y) in val_logits {
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite validation logits".into()));
        }
        if *y >= z.len() {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {} classes",
                z.len()
            )));
        }
    }
    let mut grid = Vec::new();
    let mut k = 0;
    loop {
        let tau = 0.05 * 1.05f64.powi(k);
        if tau >= 20.0 {
            break;
        }
        grid.push(tau);
        k += 1;
    }
    grid.push(20.0);

    let mut best_tau = grid[0];
    let mut best_nll = f64::INFINITY;
    let mut scaled = Vec::new();
    for &tau in &grid {
        let mut nll = 0.0;
        for (z, y) in val_logits {
            scaled.clear();
            scaled.extend(z.iter().map(|&v| v / tau));
            nll += log_sum_exp(&scaled) - scaled[*y];
        }
        nll /= val_logits.len() as f64;
        if nll < best_nll {
            best_nll = nll;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

/// Termination rule: stop once the confidence reaches the threshold.
/// `>=` makes `th_c = 0` stop at the first step and `th_c = 1` stop only on
/// exact certainty.
pub fn decide(confidence: f64, th_c: f64) -> bool {
    confidence >= th_c
}

/// First-crossing step of every (sample, threshold) pair in one pass per
/// sample: the running maximum of the confidence sequence is monotone, so a
/// single merge against the ascending thresholds costs O(T + H). Samples
/// that never cross report the final step.
pub fn termination_times(
    conf_seqs: &[Vec<f64>],
    thresholds: &[f64],
) -> Result<Vec<Vec<usize>>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "thresholds must be sorted ascending".into(),
        ));
    }
    let mut out = Vec::with_capacity(conf_seqs.len());
    for seq in conf_seqs {
        if seq.is_empty() {
            return Err(Error::InvalidInput("empty confidence trajectory".into()));
        }
        let t_last = seq.len();
        let mut steps = vec![t_last; thresholds.len()];
        let mut h = 0;
        let mut running_max = f64::NEG_INFINITY;
        for (t, &c) in seq.iter().enumerate() {
            if c > running_max {
                running_max = c;
                while h < thresholds.len() && thresholds[h] <= running_max {
                    steps[h] = t + 1;
                    h += 1;
                }
                if h == thresholds.len() {
                    break;
                }
            }
        }
        out.push(steps);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub th_c: f64,
    pub avg_steps: f64,
    pub accuracy: f64,
    pub efficient: bool,
}

/// Candidate-threshold sweep results plus the fixed-T baseline and the
/// currently chosen operating threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoCurve {
    pub baseline_steps: usize,
    pub baseline_accuracy: f64,
    pub points: Vec<ParetoPoint>,
    pub chosen: f64,
    pub epsilon: f64,
}

impl ParetoCurve {
    /// Re-select the operating threshold under a different accuracy
    /// tolerance.
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.chosen = choose_threshold(&self, epsilon)?;
        self.epsilon = epsilon;
        Ok(self)
    }
}

/// Uniform threshold grid over [0, 1] with the given resolution; endpoints
/// are exact. Resolution 0.1 yields the 11-point grid.
pub fn build_grid(resolution: f64) -> Result<Vec<f64>> {
    if !(resolution.is_finite() && resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "grid resolution {resolution} outside (0, 1]"
        )));
    }
    let n = (1.0 / resolution).round().max(1.0) as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Sweep candidate thresholds over full-length trajectories: per threshold,
/// the mean termination step and the accuracy of the prediction at each
/// sample's termination step, with Pareto-efficiency flags. The chosen
/// threshold is initialized with a zero accuracy tolerance.
pub fn pareto_scan(
    trajs: &[Trajectory],
    divisor: f64,
    thresholds: &[f64],
    t_max: usize,
) -> Result<ParetoCurve> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("pareto scan needs trajectories".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidInput("pareto scan needs thresholds".into()));
    }
    if thresholds
        .iter()
        .any(|&t| !(0.0..=1.0).contains(&t) || !t.is_finite())
    {
        return Err(Error::InvalidInput("thresholds must lie in [0, 1]".into()));
    }
    for (i, traj) in trajs.iter().enumerate() {
        if traj.steps.len() != t_max {
            return Err(Error::InvalidInput(format!(
                "trajectory {i} has {} steps, expected {t_max}",
                traj.steps.len()
            )));
        }
    }
    let conf_seqs: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| confidence_sequence(t, divisor))
        .collect::<Result<_>>()?;
    let correct: Vec<Vec<bool>> = trajs
        .iter()
        .map(|t| t.steps.iter().map(|s| s.predicted == t.label).collect())
        .collect();

    let times = termination_times(&conf_seqs, thresholds)?;
    let n = trajs.len() as f64;
    let mut points = Vec::with_capacity(thresholds.len());
    for (h, &th_c) in thresholds.iter().enumerate() {
        let mut step_sum = 0usize;
        let mut correct_count = 0usize;
        for (s, sample_times) in times.iter().enumerate() {
            let t = sample_times[h];
            step_sum += t;
            if correct[s][t - 1] {
                correct_count += 1;
            }
        }
        points.push(ParetoPoint {
            th_c,
            avg_steps: step_sum as f64 / n,
            accuracy: correct_count as f64 / n,
            efficient: false,
        });
    }
    mark_efficient(&mut points);

    let baseline_accuracy =
        correct.iter().filter(|c| c[t_max - 1]).count() as f64 / n;
    let mut curve = ParetoCurve {
        baseline_steps: t_max,
        baseline_accuracy,
        points,
        chosen: 1.0,
        epsilon: 0.0,
    };
    curve.chosen = choose_threshold(&curve, 0.0)?;
    Ok(curve)
}

/// Dominance flags: a point is efficient iff no other point has
/// (steps <=, accuracy >=) with one strict inequality.
fn mark_efficient(points: &mut [ParetoPoint]) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .avg_steps
            .partial_cmp(&points[b].avg_steps)
            .unwrap()
    });
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && points[order[j]].avg_steps == points[order[i]].avg_steps {
            j += 1;
        }
        let group_max = order[i..j]
            .iter()
            .map(|&k| points[k].accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        for &k in &order[i..j] {
            points[k].efficient =
                points[k].accuracy == group_max && points[k].accuracy > best_before;
        }
        best_before = best_before.max(group_max);
        i = j;
    }
}

/// Lowest-latency threshold whose accuracy stays within `epsilon` of the
/// baseline; ties resolve to the larger (more conservative) threshold.
pub fn choose_threshold(curve: &ParetoCurve, epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon {epsilon} must be nonnegative"
        )));
    }
    if !curve.points.iter().any(|p| p.th_c == 1.0) {
        return Err(Error::InvalidInput(
            "pareto curve lacks the baseline point th_c = 1".into(),
        ));
    }
    let floor = curve.baseline_accuracy - epsilon;
    let mut best: Option<&ParetoPoint> = None;
    for p in &curve.points {
        if p.accuracy >= floor {
            let replace = match best {
                None => true,
                Some(b) => {
                    p.avg_steps < b.avg_steps
                        || (p.avg_steps == b.avg_steps && p.th_c > b.th_c)
                }
            };
            if replace {
                best = Some(p);
            }
        }
    }
    best.map(|p| p.th_c).ok_or_else(|| {
        Error::InvalidInput("no threshold satisfies the accuracy constraint".into())
    })
}

/// Upper bound with ground-truth access: stop each sample at its first
/// correct prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// First step whose prediction matches the label, per sample.
    pub first_correct: Vec<Option<usize>>,
    pub accuracy: f64,
    pub avg_steps: f64,
}

pub fn oracle_upper_bound(trajs: &[Trajectory], t_max: usize) -> Result<OracleResult> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("oracle needs trajectories".into()));
    }
    let mut first_correct = Vec::with_capacity(trajs.len());
    let mut step_sum = 0usize;
    let mut hits = 0usize;
    for (i, traj) in trajs.iter().enumerate() {
        if traj.steps.len() != t_max {
            return Err(Error::InvalidInput(format!(
                "trajectory {i} has {} steps, expected {t_max}",
                traj.steps.len()
            )));
        }
        let hit = traj
            .steps
            .iter()
            .position(|s| s.predicted == traj.label)
            .map(|p| p + 1);
        match hit {
            Some(t) => {
                hits += 1;
                step_sum += t;
            }
            None => step_sum += t_max,
        }
        first_correct.push(hit);
    }
    Ok(OracleResult {
        first_correct,
        accuracy: hits as f64 / trajs.len() as f64,
        avg_steps: step_sum as f64 / trajs.len() as f64,
    })
}

/// Fixed-readout accuracy at every step `t = 1..=t_max`.
pub fn baseline_curve(trajs: &[Trajectory], t_max: usize) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("baseline curve needs trajectories".into()));
    }
    for (i, traj) in trajs.iter().enumerate() {
        if traj.steps.len() != t_max {
            return Err(Error::InvalidInput(format!(
                "trajectory {i} has {} steps, expected {t_max}",
                traj.steps.len()
            )));
        }
    }
    Ok((0..t_max)
        .map(|t| {
            trajs.iter().filter(|tr| tr.steps[t].predicted == tr.label).count() as f64
                / trajs.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::StepRecord;
    use crate::math::argmax;
    use proptest::prelude::*;

    #[test]
    fn confidence_uniform_logits() {
        let z = vec![0.5; 10];
        for d in [0.3, 1.0, 7.0] {
            assert!((confidence(&z, d).unwrap() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_closed_form() {
        let c = confidence(&[2.0f64.ln(), 0.0], 1.0).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_saturates() {
        let c = confidence(&[100.0, 0.0], 1.0).unwrap();
        assert!((c - 1.0).abs() < 1e-6);
    }

    #[test]
    fn confidence_rejects_bad_inputs() {
        assert!(confidence(&[1.0], 1.0).is_err());
        assert!(confidence(&[1.0, 2.0], 0.0).is_err());
        assert!(confidence(&[1.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn alpha_selection_per_mode() {
        let single = SchedulePolicy::SINGLE_SHOT;
        let constant = SchedulePolicy::QCFS;
        assert_eq!(
            select_alpha(ConversionMode::Qffs, 2, 12, &constant).unwrap(),
            3.0
        );
        assert_eq!(
            select_alpha(ConversionMode::Qcfs, 2, 30, &constant).unwrap(),
            30.0
        );
        assert_eq!(
            select_alpha(ConversionMode::Qffs, 2, 12, &single).unwrap(),
            1.0
        );
        assert_eq!(
            select_alpha(ConversionMode::DataNorm, 2, 16, &constant).unwrap(),
            16.0
        );
    }

    #[test]
    fn temperature_degenerate_ties_to_grid_minimum() {
        let val = vec![(vec![1.0, 1.0, 1.0], 0usize); 4];
        assert_eq!(fit_temperature(&val).unwrap(), 0.05);
    }

    #[test]
    fn temperature_confident_correct_sample() {
        let val = vec![(vec![1.0, 0.0], 0usize)];
        assert_eq!(fit_temperature(&val).unwrap(), 0.05);
    }

    #[test]
    fn temperature_wrong_labels_clamp_high() {
        let val = vec![
            (vec![10.0, 0.0], 1usize),
            (vec![0.0, 12.0], 0usize),
            (vec![11.0, 0.0], 1usize),
        ];
        assert_eq!(fit_temperature(&val).unwrap(), 20.0);
    }

    #[test]
    fn temperature_rejects_empty() {
        assert!(fit_temperature(&[]).is_err());
    }

    #[test]
    fn decide_worked_example() {
        let conf = [0.1, 0.3, 0.5, 0.7, 0.9];
        let first = conf.iter().position(|&c| decide(c, 0.6)).map(|i| i + 1);
        assert_eq!(first, Some(4));
        assert!(conf.iter().all(|&c| !decide(c, 1.0)));
        assert!(decide(conf[0], 0.0));
    }

    #[test]
    fn termination_first_crossing() {
        let seqs = vec![vec![0.3, 0.2, 0.5]];
        let t = termination_times(&seqs, &[0.25]).unwrap();
        assert_eq!(t[0], vec![1]);
        let t = termination_times(&seqs, &[0.4]).unwrap();
        assert_eq!(t[0], vec![3]);
        let t = termination_times(&seqs, &[0.9]).unwrap();
        assert_eq!(t[0], vec![3]); // never crosses -> final step
    }

    #[test]
    fn termination_requires_sorted_nonempty() {
        assert!(termination_times(&[vec![0.5]], &[0.9, 0.1]).is_err());
        assert!(termination_times(&[vec![]], &[0.5]).is_err());
    }

    #[test]
    fn grid_resolution_point_one_gives_eleven() {
        let g = build_grid(0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    fn record(logits: Vec<f64>) -> StepRecord {
        let predicted = argmax(&logits);
        StepRecord {
            logits,
            predicted,
            spike_events: 0,
        }
    }

    /// Logits for a two-class problem with the requested max-softmax
    /// confidence; `winner` selects the predicted class.
    fn logits_for_conf(conf: f64, winner: usize) -> Vec<f64> {
        if (conf - 0.5).abs() < 1e-15 {
            return vec![0.0, 0.0];
        }
        let a = (conf / (1.0 - conf)).ln();
        if winner == 0 {
            vec![a, 0.0]
        } else {
            vec![0.0, a]
        }
    }

    fn two_sample_trajs() -> Vec<Trajectory> {
        // Sample 1, label 1: conf [0.5, 0.9], correct [no, yes]
        // (conf 0.5 means tied logits; argmax picks class 0 -> wrong).
        let s1 = Trajectory {
            label: 1,
            steps: vec![
                record(logits_for_conf(0.5, 0)),
                record(logits_for_conf(0.9, 1)),
            ],
            termination_step: 2,
        };
        // Sample 2, label 0: conf [0.7, 0.8], correct [yes, yes].
        let s2 = Trajectory {
            label: 0,
            steps: vec![
                record(logits_for_conf(0.7, 0)),
                record(logits_for_conf(0.8, 0)),
            ],
            termination_step: 2,
        };
        vec![s1, s2]
    }

    #[test]
    fn pareto_two_sample_example() {
        let trajs = two_sample_trajs();
        let curve = pareto_scan(&trajs, 1.0, &[0.6, 1.0], 2).unwrap();
        let p06 = &curve.points[0];
        assert!((p06.avg_steps - 1.5).abs() < 1e-12);
        assert_eq!(p06.accuracy, 1.0);
        let p10 = &curve.points[1];
        assert_eq!(p10.avg_steps, 2.0);
        assert_eq!(p10.accuracy, 1.0);
        assert!(p06.efficient);
        assert!(!p10.efficient);
        assert_eq!(curve.chosen, 0.6);
    }

    #[test]
    fn pareto_threshold_zero_stops_immediately() {
        let trajs = two_sample_trajs();
        let curve = pareto_scan(&trajs, 1.0, &[0.0, 1.0], 2).unwrap();
        assert_eq!(curve.points[0].avg_steps, 1.0);
        // Step-1 accuracy: s1 wrong, s2 right.
        assert_eq!(curve.points[0].accuracy, 0.5);
    }

    #[test]
    fn pareto_baseline_point_matches_fixed_t() {
        let trajs = two_sample_trajs();
        let grid = build_grid(0.1).unwrap();
        let curve = pareto_scan(&trajs, 1.0, &grid, 2).unwrap();
        let p = curve.points.iter().find(|p| p.th_c == 1.0).unwrap();
        assert_eq!(p.avg_steps, curve.baseline_steps as f64);
        assert_eq!(p.accuracy, curve.baseline_accuracy);
    }

    #[test]
    fn choose_threshold_tolerance_cases() {
        let trajs = two_sample_trajs();
        let curve = pareto_scan(&trajs, 1.0, &[0.0, 0.6, 1.0], 2).unwrap();
        // epsilon = 0: the 0.0 point loses accuracy, 0.6 is fastest feasible.
        assert_eq!(choose_threshold(&curve, 0.0).unwrap(), 0.6);
        // epsilon = 1: constraint vacuous, fastest point wins.
        assert_eq!(choose_threshold(&curve, 1.0).unwrap(), 0.0);
        // Negative tolerance rejected.
        assert!(choose_threshold(&curve, -0.1).is_err());
    }

    #[test]
    fn choose_threshold_falls_back_to_baseline() {
        // Single sample correct only at the last step: every lower threshold
        // loses accuracy, so the baseline threshold must be chosen.
        let s = Trajectory {
            label: 1,
            steps: vec![
                record(logits_for_conf(0.8, 0)),
                record(logits_for_conf(0.9, 1)),
            ],
            termination_step: 2,
        };
        let curve = pareto_scan(&[s], 1.0, &[0.3, 1.0], 2).unwrap();
        assert_eq!(curve.chosen, 1.0);
    }

    #[test]
    fn oracle_first_hit() {
        let t = Trajectory {
            label: 0,
            steps: vec![
                record(vec![0.0, 1.0]),
                record(vec![1.0, 0.0]),
                record(vec![0.0, 1.0]),
            ],
            termination_step: 3,
        };
        let oracle = oracle_upper_bound(&[t], 3).unwrap();
        assert_eq!(oracle.first_correct, vec![Some(2)]);
        assert_eq!(oracle.accuracy, 1.0);
        assert_eq!(oracle.avg_steps, 2.0);
    }

    #[test]
    fn oracle_never_correct_counts_full_steps() {
        let t = Trajectory {
            label: 1,
            steps: vec![record(vec![1.0, 0.0]), record(vec![1.0, 0.0])],
            termination_step: 2,
        };
        let oracle = oracle_upper_bound(&[t], 2).unwrap();
        assert_eq!(oracle.first_correct, vec![None]);
        assert_eq!(oracle.accuracy, 0.0);
        assert_eq!(oracle.avg_steps, 2.0);
    }

    #[test]
    fn baseline_curve_and_oracle_dominance() {
        let trajs = two_sample_trajs();
        let curve = baseline_curve(&trajs, 2).unwrap();
        assert_eq!(curve, vec![0.5, 1.0]);
        let oracle = oracle_upper_bound(&trajs, 2).unwrap();
        let max_fixed = curve.iter().cloned().fold(0.0, f64::max);
        assert!(oracle.accuracy >= max_fixed);
        assert!(oracle.avg_steps <= 2.0);
    }

    proptest! {
        /// Scaling the divisor never changes the predicted label.
        #[test]
        fn argmax_invariant_under_divisor(
            z in proptest::collection::vec(-10.0f64..10.0, 2..8),
            d in 0.01f64..50.0,
        ) {
            let scaled: Vec<f64> = z.iter().map(|&v| v / d).collect();
            prop_assert_eq!(argmax(&z), argmax(&scaled));
        }

        /// Confidence strictly decreases in the divisor for non-constant
        /// logits and equals 1/K for constant ones.
        #[test]
        fn confidence_monotone_in_divisor(
            z in proptest::collection::vec(-5.0f64..5.0, 2..6),
            d1 in 0.05f64..5.0,
            scale in 1.1f64..10.0,
        ) {
            let spread = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - z.iter().cloned().fold(f64::INFINITY, f64::min);
            let d2 = d1 * scale;
            let c1 = confidence(&z, d1).unwrap();
            let c2 = confidence(&z, d2).unwrap();
            if spread > 1e-6 {
                prop_assert!(c2 < c1);
            } else if spread == 0.0 {
                let k = z.len() as f64;
                prop_assert!((c1 - 1.0 / k).abs() < 1e-9);
                prop_assert!((c2 - 1.0 / k).abs() < 1e-9);
            }
        }

        /// First-crossing steps are monotone in the threshold.
        #[test]
        fn termination_monotone_in_threshold(
            seq in proptest::collection::vec(0.0f64..1.0, 1..20),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let t2 = (t1 + dt).min(1.0);
            let times = termination_times(&[seq], &[t1, t2]).unwrap();
            prop_assert!(times[0][0] <= times[0][1]);
        }
    }
}
