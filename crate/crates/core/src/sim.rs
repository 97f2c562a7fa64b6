//! Closed-loop assembly and time integration.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::controllers::{AdaptedKind, Controller};
use crate::error::{config, Error, Result};
use crate::plants::Plant;

/// Scalar disturbance signals with an analytic sup norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSignal {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * cos(angular_frequency * t + phase)`.
    Sinusoid {
        amplitude: f64,
        angular_frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `value` for `t >= start`, zero before. Sums of steps give piecewise-constant signals.
    Step {
        value: f64,
        start: f64,
    },
    Sum {
        terms: Vec<DisturbanceSignal>,
    },
}

impl DisturbanceSignal {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DisturbanceSignal::Zero => 0.0,
            DisturbanceSignal::Constant { value } => *value,
            DisturbanceSignal::Sinusoid {
                amplitude,
                angular_frequency,
                phase,
            } => amplitude * (angular_frequency * t + phase).cos(),
            DisturbanceSignal::Step { value, start } => {
                if t >= *start {
                    *value
                } else {
                    0.0
                }
            }
            DisturbanceSignal::Sum { terms } => terms.iter().map(|d| d.eval(t)).sum(),
        }
    }

    /// `||d||_inf`. For sums this is the triangle-inequality bound.
    pub fn sup_norm(&self) -> f64 {
        match self {
            DisturbanceSignal::Zero => 0.0,
            DisturbanceSignal::Constant { value } => value.abs(),
            DisturbanceSignal::Sinusoid { amplitude, .. } => amplitude.abs(),
            DisturbanceSignal::Step { value, .. } => value.abs(),
            DisturbanceSignal::Sum { terms } => terms.iter().map(|d| d.sup_norm()).sum(),
        }
    }
}

pub fn eval_disturbance(d: &DisturbanceSignal, t: f64) -> f64 {
    d.eval(t)
}

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_BLOWUP_GUARD: f64 = 1e8;
pub const DEFAULT_STRIDE: usize = 10;

fn default_guard() -> f64 {
    DEFAULT_BLOWUP_GUARD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolverMethod {
    Rk4Fixed {
        dt: f64,
    },
    /// Dormand–Prince 5(4) with step-size control.
    Rk45Adaptive {
        rel_tol: f64,
        abs_tol: f64,
        dt_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(flatten)]
    pub method: SolverMethod,
    /// Integration stops once any augmented-state entry exceeds this magnitude.
    #[serde(default = "default_guard")]
    pub blowup_guard: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::rk4(DEFAULT_DT)
    }
}

impl SolverConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            method: SolverMethod::Rk4Fixed { dt },
            blowup_guard: DEFAULT_BLOWUP_GUARD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            SolverMethod::Rk4Fixed { dt } if !(dt > 0.0) => return config("solver: dt must be positive"),
            SolverMethod::Rk45Adaptive {
                rel_tol,
                abs_tol,
                dt_max,
            } if !(rel_tol > 0.0 && abs_tol > 0.0 && dt_max > 0.0) => {
                return config("solver: tolerances and dt_max must be positive")
            }
            _ => {}
        }
        if !(self.blowup_guard > 0.0) {
            return config("solver: blowup_guard must be positive");
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self.method {
            SolverMethod::Rk4Fixed { .. } => "rk4_fixed",
            SolverMethod::Rk45Adaptive { .. } => "rk45_adaptive",
        }
    }
}

/// A fully specified closed-loop experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub plant: Plant,
    pub controller: Controller,
    /// True parameter vector.
    pub theta: Vec<f64>,
    pub disturbance: DisturbanceSignal,
    pub x0: Vec<f64>,
    pub adapted0: Vec<f64>,
    pub t_end: f64,
    pub solver: SolverConfig,
    /// Store every `output_stride`-th step (plus the final one).
    pub output_stride: usize,
    pub hash: Option<String>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.plant.n();
        if self.x0.len() != n {
            return config(format!(
                "scenario {}: x0 has dimension {}, plant has {n}",
                self.label,
                self.x0.len()
            ));
        }
        if self.theta.len() != self.plant.p() {
            return config(format!(
                "scenario {}: theta has dimension {}, plant has p={}",
                self.label,
                self.theta.len(),
                self.plant.p()
            ));
        }
        if self.controller.state_dim() != n {
            return config(format!(
                "scenario {}: controller expects state dimension {}, plant has {n}",
                self.label,
                self.controller.state_dim()
            ));
        }
        if self.adapted0.len() != self.controller.adapted_dim() {
            return config(format!(
                "scenario {}: adapted0 has dimension {}, controller needs {}",
                self.label,
                self.adapted0.len(),
                self.controller.adapted_dim()
            ));
        }
        if !(self.t_end > 0.0) || self.output_stride == 0 {
            return config("scenario: t_end must be positive and output stride at least 1");
        }
        if self
            .x0
            .iter()
            .chain(&self.adapted0)
            .chain(&self.theta)
            .any(|v| !v.is_finite())
        {
            return config("scenario: initial state and parameters must be finite");
        }
        self.solver.validate()
    }

    pub fn augmented0(&self) -> Vec<f64> {
        [&self.x0[..], &self.adapted0[..]].concat()
    }
}

/// Derivative of the augmented state `(x, adapted)`.
pub fn closed_loop_rhs(scenario: &Scenario, t: f64, y: &[f64]) -> Result<Vec<f64>> {
    let n = scenario.plant.n();
    if y.len() != n + scenario.controller.adapted_dim() {
        return config("closed_loop_rhs: augmented state has the wrong dimension");
    }
    let (x, adapted) = y.split_at(n);
    let with_time = |e: Error| match e {
        Error::NumericFault { what, .. } => Error::NumericFault {
            what,
            t: Some(t),
            state: y.to_vec(),
        },
        other => other,
    };
    let u = scenario.controller.control(x, adapted).map_err(with_time)?;
    let d = scenario.disturbance.eval(t);
    let mut out = scenario.plant.rhs(x, u, &scenario.theta, d).map_err(with_time)?;
    out.extend(scenario.controller.adapted_rate(x, adapted).map_err(with_time)?);
    Ok(out)
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(f: &F, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, k)| x + s * k).collect() };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1))?;
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2))?;
    let k4 = f(t + h, &axpy(y, h, &k3))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step: returns the fifth-order solution and the
/// embedded error estimate.
pub fn dopri_step<F>(f: &F, t: f64, y: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for stage in 0..7 {
        let yi: Vec<f64> = (0..n)
            .map(|i| y[i] + h * (0..stage).map(|j| DP_A[stage][j] * k[j][i]).sum::<f64>())
            .collect();
        k.push(f(t + DP_C[stage] * h, &yi)?);
    }
    let y5: Vec<f64> = (0..n)
        .map(|i| y[i] + h * (0..7).map(|s| DP_B5[s] * k[s][i]).sum::<f64>())
        .collect();
    let err: Vec<f64> = (0..n)
        .map(|i| h * (0..7).map(|s| (DP_B5[s] - DP_B4[s]) * k[s][i]).sum::<f64>())
        .collect();
    Ok((y5, err))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub scenario_hash: Option<String>,
    pub solver: String,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
}

/// Sampled closed-loop solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub adapted: Vec<Vec<f64>>,
    /// Adapted-state derivative evaluated at each stored sample.
    pub adapted_rates: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub v_values: Vec<f64>,
    pub d_values: Vec<f64>,
    pub adapted_kind: AdaptedKind,
    /// Index of the last stored sample when integration stopped at the blowup guard.
    pub truncated_at: Option<usize>,
    pub truncation_reason: Option<String>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    fn empty(kind: AdaptedKind, meta: TrajectoryMeta) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            adapted: Vec::new(),
            adapted_rates: Vec::new(),
            controls: Vec::new(),
            v_values: Vec::new(),
            d_values: Vec::new(),
            adapted_kind: kind,
            truncated_at: None,
            truncation_reason: None,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated_at.is_some()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn state_norms(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// `rho = exp(z)` for log-gain controllers, the stored gain for the foil.
    pub fn rho(&self) -> Option<Vec<f64>> {
        match self.adapted_kind {
            AdaptedKind::LogGain => Some(self.adapted.iter().map(|a| a[0].exp()).collect()),
            AdaptedKind::Gain => Some(self.adapted.iter().map(|a| a[0]).collect()),
            _ => None,
        }
    }

    pub fn final_rho(&self) -> Option<f64> {
        self.rho().and_then(|r| r.last().copied())
    }

    /// Index of the first sample with `t >= t0`.
    pub fn index_at(&self, t0: f64) -> usize {
        self.times.partition_point(|&t| t < t0)
    }

    fn push(&mut self, scenario: &Scenario, t: f64, y: &[f64]) -> Result<()> {
        let n = scenario.plant.n();
        let (x, a) = y.split_at(n);
        let u = scenario.controller.control(x, a)?;
        let rates = scenario.controller.adapted_rate(x, a)?;
        let v = scenario.controller.lyapunov(x);
        if !v.is_finite() {
            return Err(Error::NumericFault {
                what: "lyapunov value".into(),
                t: Some(t),
                state: y.to_vec(),
            });
        }
        self.times.push(t);
        self.states.push(x.to_vec());
        self.adapted.push(a.to_vec());
        self.adapted_rates.push(rates);
        self.controls.push(u);
        self.v_values.push(v);
        self.d_values.push(scenario.disturbance.eval(t));
        Ok(())
    }

    fn truncate_here(&mut self, reason: String) {
        self.truncated_at = Some(self.len().saturating_sub(1));
        self.truncation_reason = Some(reason);
    }

    /// Writes `t,x1..xn,adapted1..adaptedm[,rho],u,V,d` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.adapted.first().map_or(0, Vec::len);
        let rho = self.rho();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(csv_header(n, m, rho.is_some()))?;
        for i in 0..self.len() {
            let mut row = Vec::with_capacity(n + m + 5);
            row.push(fmt17(self.times[i]));
            row.extend(self.states[i].iter().map(|v| fmt17(*v)));
            row.extend(self.adapted[i].iter().map(|v| fmt17(*v)));
            if let Some(r) = &rho {
                row.push(fmt17(r[i]));
            }
            row.push(fmt17(self.controls[i]));
            row.push(fmt17(self.v_values[i]));
            row.push(fmt17(self.d_values[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]. The adapted
    /// derivatives are not part of the file and are re-evaluated from the
    /// scenario's controller.
    pub fn read_csv<R: Read>(reader: R, scenario: &Scenario) -> Result<Self> {
        let n = scenario.plant.n();
        let m = scenario.controller.adapted_dim();
        let kind = scenario.controller.adapted_kind();
        let has_rho = matches!(kind, AdaptedKind::LogGain | AdaptedKind::Gain);
        let expected = csv_header(n, m, has_rho);
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != expected {
            return config(format!(
                "trajectory csv: header {header:?} does not match scenario {expected:?}"
            ));
        }
        let mut traj = Trajectory::empty(
            kind,
            TrajectoryMeta {
                scenario_hash: scenario.hash.clone(),
                solver: scenario.solver.label().to_string(),
                ..Default::default()
            },
        );
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("trajectory csv: {e}")))?;
            if vals.len() != expected.len() {
                return config("trajectory csv: ragged row");
            }
            let x = vals[1..1 + n].to_vec();
            let a = vals[1 + n..1 + n + m].to_vec();
            let tail = &vals[1 + n + m + usize::from(has_rho)..];
            traj.adapted_rates.push(scenario.controller.adapted_rate(&x, &a)?);
            traj.times.push(vals[0]);
            traj.states.push(x);
            traj.adapted.push(a);
            traj.controls.push(tail[0]);
            traj.v_values.push(tail[1]);
            traj.d_values.push(tail[2]);
        }
        if traj.times.windows(2).any(|w| !(w[0] < w[1])) {
            return config("trajectory csv: times must be strictly increasing");
        }
        Ok(traj)
    }
}

pub fn csv_header(n: usize, m: usize, rho: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("adapted{i}")));
    if rho {
        h.push("rho".into());
    }
    h.extend(["u", "V", "d"].map(String::from));
    h
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn exceeds_guard(y: &[f64], guard: f64) -> bool {
    y.iter().any(|v| !v.is_finite() || v.abs() > guard)
}

/// Integrates a scenario. Numeric faults and blowup past the guard end the
/// run early and mark the trajectory as truncated; configuration errors are
/// returned as errors.
pub fn integrate(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let mut traj = Trajectory::empty(
        scenario.controller.adapted_kind(),
        TrajectoryMeta {
            scenario_hash: scenario.hash.clone(),
            solver: scenario.solver.label().to_string(),
            ..Default::default()
        },
    );
    let y0 = scenario.augmented0();
    traj.push(scenario, 0.0, &y0)?;
    let evals = std::cell::Cell::new(0usize);
    let rhs = |t: f64, y: &[f64]| {
        evals.set(evals.get() + 1);
        closed_loop_rhs(scenario, t, y)
    };
    let guard = scenario.solver.blowup_guard;
    let stride = scenario.output_stride;

    match scenario.solver.method {
        SolverMethod::Rk4Fixed { dt } => {
            let steps = (scenario.t_end / dt).round().max(1.0) as usize;
            let mut y = y0;
            for k in 1..=steps {
                let t = (k - 1) as f64 * dt;
                let next = match rk4_step(&rhs, t, &y, dt) {
                    Ok(next) => next,
                    Err(Error::NumericFault { what, .. }) => {
                        traj.truncate_here(format!("numeric fault in {what} at t={t}"));
                        break;
                    }
                    Err(e) => return Err(e),
                };
                traj.meta.accepted_steps += 1;
                if exceeds_guard(&next, guard) {
                    traj.truncate_here(format!("state exceeded blowup guard {guard} at t={}", k as f64 * dt));
                    break;
                }
                y = next;
                if k % stride == 0 || k == steps {
                    let tk = k as f64 * dt;
                    if let Err(e) = traj.push(scenario, tk, &y) {
                        match e {
                            Error::NumericFault { what, .. } => {
                                traj.truncate_here(format!("numeric fault in {what} at t={tk}"));
                                break;
                            }
                            e => return Err(e),
                        }
                    }
                }
            }
        }
        SolverMethod::Rk45Adaptive {
            rel_tol,
            abs_tol,
            dt_max,
        } => {
            let t_end = scenario.t_end;
            let mut t = 0.0;
            let mut y = y0;
            let mut h = dt_max.min(t_end / 100.0).min(1e-3);
            let mut accepted = 0usize;
            while t < t_end {
                let last = t + h >= t_end;
                let step = if last { t_end - t } else { h };
                let (next, err) = match dopri_step(&rhs, t, &y, step) {
                    Ok(r) => r,
                    Err(Error::NumericFault { what, .. }) => {
                        traj.truncate_here(format!("numeric fault in {what} at t={t}"));
                        break;
                    }
                    Err(e) => return Err(e),
                };
                let err_norm = err
                    .iter()
                    .zip(y.iter().zip(&next))
                    .map(|(e, (a, b))| e.abs() / (abs_tol + rel_tol * a.abs().max(b.abs())))
                    .fold(0.0, f64::max);
                if !err_norm.is_finite() {
                    traj.truncate_here(format!("non-finite error estimate at t={t}"));
                    break;
                }
                if err_norm <= 1.0 {
                    t = if last { t_end } else { t + step };
                    accepted += 1;
                    traj.meta.accepted_steps += 1;
                    if exceeds_guard(&next, guard) {
                        traj.truncate_here(format!("state exceeded blowup guard {guard} at t={t}"));
                        break;
                    }
                    y = next;
                    if accepted.is_multiple_of(stride) || t >= t_end {
                        if let Err(e) = traj.push(scenario, t, &y) {
                            match e {
                                Error::NumericFault { what, .. } => {
                                    traj.truncate_here(format!("numeric fault in {what} at t={t}"));
                                    break;
                                }
                                e => return Err(e),
                            }
                        }
                    }
                } else {
                    traj.meta.rejected_steps += 1;
                }
                let factor = if err_norm == 0.0 {
                    5.0
                } else {
                    (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = (step * factor).min(dt_max);
                if h < 1e-14 * (1.0 + t.abs()) {
                    traj.truncate_here(format!("step size underflow at t={t}"));
                    break;
                }
            }
        }
    }
    traj.meta.rhs_evals = evals.get();
    Ok(traj)
}
