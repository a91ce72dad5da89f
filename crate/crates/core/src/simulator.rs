//! Closed-loop simulation: RK4 plant integration under a zero-order-hold
//! controller, disturbance and payload schedules, reference trajectories,
//! CSV trajectory logs and tracking metrics.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{ControlOutput, Controller, Desired, JointTarget, TaskTarget};
use crate::dynamics::{forward_dynamics, inertia_matrix, ArmModel, CoefficientVector};
use crate::error::{Error, Result};
use crate::identification::SampleBatch;
use crate::kinematics::tip_position;

/// Version written to, and required from, the `# schema=` line of a log.
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Additive generalized-force disturbance, applied to every coordinate
/// through a per-coordinate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    Constant {
        value: Vec<f64>,
    },
    /// Zero before `time`, `value` from then on.
    Step {
        time: f64,
        value: Vec<f64>,
    },
    /// `amplitude * sin(omega t + phase)`.
    Sinusoid {
        amplitude: Vec<f64>,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Disturbance {
    fn vector(&self) -> &[f64] {
        match self {
            Disturbance::Constant { value } | Disturbance::Step { value, .. } => value,
            Disturbance::Sinusoid { amplitude, .. } => amplitude,
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        let v = DVector::from_column_slice(self.vector());
        match self {
            Disturbance::Constant { .. } => v,
            Disturbance::Step { time, .. } => {
                if t >= *time {
                    v
                } else {
                    DVector::zeros(v.len())
                }
            }
            Disturbance::Sinusoid { omega, phase, .. } => v * (omega * t + phase).sin(),
        }
    }

    /// Elementwise bound on `|d(t)|` over all `t`.
    pub fn bound(&self) -> DVector<f64> {
        DVector::from_iterator(self.vector().len(), self.vector().iter().map(|v| v.abs()))
    }
}

/// Tip payload switching to `mass` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadChange {
    pub time: f64,
    pub mass: f64,
}

/// The simulated arm as it really is, which the controller may not know.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantTruth {
    pub model: ArmModel,
    pub disturbances: Vec<Disturbance>,
    /// Applied in time order on top of the model's own tip payload.
    pub payload_schedule: Vec<PayloadChange>,
    /// Declared elementwise bound on the total disturbance.
    pub disturbance_bound: DVector<f64>,
}

impl PlantTruth {
    /// Undisturbed plant with a constant payload.
    pub fn new(model: ArmModel) -> Self {
        let dof = model.dof();
        Self {
            model,
            disturbances: Vec::new(),
            payload_schedule: Vec::new(),
            disturbance_bound: DVector::zeros(dof),
        }
    }

    pub fn with_disturbance(mut self, d: Disturbance) -> Self {
        if d.vector().len() == self.model.dof() {
            self.disturbance_bound += d.bound();
        }
        self.disturbances.push(d);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dof = self.model.dof();
        if self.disturbance_bound.len() != dof {
            return Err(Error::invalid("disturbance bound must have one entry per coordinate"));
        }
        let mut sum = DVector::zeros(dof);
        for d in &self.disturbances {
            if d.vector().len() != dof {
                return Err(Error::invalid(format!(
                    "disturbance has {} entries, expected {dof}",
                    d.vector().len()
                )));
            }
            if d.vector().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("disturbance values must be finite"));
            }
            sum += d.bound();
        }
        if sum.iter().zip(self.disturbance_bound.iter()).any(|(s, b)| s > b) {
            return Err(Error::invalid("disturbances exceed the declared bound"));
        }
        let mut last = f64::NEG_INFINITY;
        for c in &self.payload_schedule {
            if !(c.time >= last) || !(c.mass >= 0.0) {
                return Err(Error::invalid("payload schedule must be time-ordered with masses >= 0"));
            }
            last = c.time;
        }
        Ok(())
    }

    pub fn payload_at(&self, t: f64) -> f64 {
        self.payload_schedule
            .iter()
            .take_while(|c| c.time <= t)
            .last()
            .map_or(self.model.params.tip_payload_mass, |c| c.mass)
    }

    pub fn model_at(&self, t: f64) -> ArmModel {
        let mut m = self.model.clone();
        m.params.tip_payload_mass = self.payload_at(t);
        m
    }

    pub fn disturbance_at(&self, t: f64) -> DVector<f64> {
        self.disturbances
            .iter()
            .fold(DVector::zeros(self.model.dof()), |acc, d| acc + d.at(t))
    }

    /// True coefficient vector at time `t`.
    pub fn coefficients_at(&self, t: f64) -> CoefficientVector {
        CoefficientVector::from_parameters(&self.model_at(t).params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt_physics: f64,
    #[serde(default = "default_rate")]
    pub controller_rate: f64,
    pub duration: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to the measured `q` (rad).
    #[serde(default)]
    pub measurement_noise: f64,
    /// Log every `log_every`-th controller tick.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_dt() -> f64 {
    1e-4
}

fn default_rate() -> f64 {
    100.0
}

fn default_log_every() -> usize {
    1
}

impl SimConfig {
    pub fn new(duration: f64, controller_rate: f64) -> Self {
        Self {
            dt_physics: default_dt(),
            controller_rate,
            duration,
            integrator: Integrator::Rk4,
            seed: 0,
            measurement_noise: 0.0,
            log_every: 1,
        }
    }

    /// Physics steps per controller tick.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.dt_physics > 0.0 && self.controller_rate > 0.0 && self.duration > 0.0) {
            return Err(Error::invalid("dt_physics, controller_rate and duration must be > 0"));
        }
        if !(self.measurement_noise >= 0.0) {
            return Err(Error::invalid("measurement_noise must be >= 0"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be >= 1"));
        }
        let ratio = 1.0 / (self.controller_rate * self.dt_physics);
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(Error::invalid(format!(
                "controller period must be an integer multiple of dt_physics (ratio {ratio})"
            )));
        }
        Ok(k as usize)
    }

    pub fn tick_count(&self) -> usize {
        (self.duration * self.controller_rate).round() as usize
    }
}

/// A reference the controller tracks.
pub trait Trajectory {
    fn sample(&self, t: f64) -> Desired;
}

/// Tip circle in a plane parallel to `xy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleTrajectory {
    pub center: [f64; 3],
    pub radius: f64,
    pub omega: f64,
}

impl CircleTrajectory {
    pub fn new(center: Vector3<f64>, radius: f64, omega: f64) -> Result<Self> {
        if !(radius > 0.0) || !omega.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("circle needs radius > 0 and finite center/omega"));
        }
        Ok(Self {
            center: [center.x, center.y, center.z],
            radius,
            omega,
        })
    }
}

/// `x_d = c + r (cos wt, sin wt, 0)` with analytic derivatives.
pub fn circle_trajectory(t: f64, radius: f64, omega: f64, center: &Vector3<f64>) -> TaskTarget {
    let (s, c) = (omega * t).sin_cos();
    TaskTarget {
        x: center + Vector3::new(radius * c, radius * s, 0.0),
        xdot: Vector3::new(-radius * omega * s, radius * omega * c, 0.0),
        xddot: Vector3::new(-radius * omega * omega * c, -radius * omega * omega * s, 0.0),
    }
}

impl Trajectory for CircleTrajectory {
    fn sample(&self, t: f64) -> Desired {
        let c = Vector3::from(self.center);
        Desired::Task(circle_trajectory(t, self.radius, self.omega, &c))
    }
}

/// Constant configuration setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint(pub DVector<f64>);

impl Trajectory for Setpoint {
    fn sample(&self, _t: f64) -> Desired {
        let n = self.0.len();
        Desired::Joint(JointTarget {
            q: self.0.clone(),
            qdot: DVector::zeros(n),
            qddot: DVector::zeros(n),
        })
    }
}

/// `p_i(t) = A sin^2(2 pi t / T + i 2 pi / 3)`.
pub fn pressure_profile(t: f64, amplitude: f64, period: f64, chamber: usize) -> f64 {
    let s = (2.0 * PI * t / period + chamber as f64 * 2.0 * PI / 3.0).sin();
    amplitude * s * s
}

/// Open-loop excitation: every segment's chamber `j` follows
/// [`pressure_profile`] with index `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub amplitude: f64,
    pub period: f64,
    pub chambers_per_segment: Vec<usize>,
}

impl Controller for FeedForward {
    fn step(&mut self, t: f64, _q: &DVector<f64>, _qdot: &DVector<f64>, _desired: &Desired, _dt: f64) -> Result<ControlOutput> {
        let p: Vec<f64> = self
            .chambers_per_segment
            .iter()
            .flat_map(|&c| (0..c).map(|j| pressure_profile(t, self.amplitude, self.period, j)))
            .collect();
        Ok(ControlOutput {
            pressures: DVector::from_vec(p),
            error: DVector::zeros(0),
            s: None,
            saturated: false,
            in_layer: false,
        })
    }
}

/// One controller tick.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Measured configuration (true configuration plus sensor noise).
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub p: Vec<f64>,
    pub tip: [f64; 3],
    pub e: Vec<f64>,
    /// NaN when the controller has no sliding variable.
    pub s: Vec<f64>,
    /// NaN when the controller does not adapt.
    pub v: f64,
    pub a_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub saturated: bool,
    pub in_layer: bool,
}

/// Column layout of a trajectory log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogShape {
    pub dof: usize,
    pub chambers: usize,
    pub error_dim: usize,
    pub coefficients: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub shape: LogShape,
    pub rows: Vec<LogRow>,
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

impl LogShape {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(indexed("q", self.dof));
        h.extend(indexed("qdot", self.dof));
        h.extend(indexed("p", self.chambers));
        h.extend(["x", "y", "z"].map(String::from));
        h.extend(indexed("e", self.error_dim));
        h.extend(indexed("s", self.dof));
        h.push("V".into());
        h.extend(indexed("ahat", self.coefficients));
        h.extend(indexed("bhat", self.bound_count()));
        h.extend(["sat", "in_layer"].map(String::from));
        h
    }

    /// Only adaptive controllers log estimates.
    fn bound_count(&self) -> usize {
        if self.coefficients > 0 {
            self.dof
        } else {
            0
        }
    }

    fn from_header(h: &[String]) -> Option<Self> {
        let count = |prefix: &str| {
            h.iter()
                .filter(|c| {
                    c.strip_prefix(prefix)
                        .is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
                })
                .count()
        };
        let shape = Self {
            dof: count("q"),
            chambers: count("p"),
            error_dim: count("e"),
            coefficients: count("ahat"),
        };
        (shape.header() == h).then_some(shape)
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

impl TrajectoryLog {
    /// Logged (measured) configurations and pressures, for identification.
    pub fn samples(&self) -> SampleBatch {
        SampleBatch {
            time: self.rows.iter().map(|r| r.t).collect(),
            q: self.rows.iter().map(|r| DVector::from_column_slice(&r.q)).collect(),
            pressures: self.rows.iter().map(|r| DVector::from_column_slice(&r.p)).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema={LOG_SCHEMA_VERSION}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.shape.header()).map_err(csv_io)?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![fmt(r.t)];
            for part in [&r.q, &r.qdot, &r.p] {
                rec.extend(part.iter().copied().map(fmt));
            }
            rec.extend(r.tip.iter().copied().map(fmt));
            for part in [&r.e, &r.s] {
                rec.extend(part.iter().copied().map(fmt));
            }
            rec.push(fmt(r.v));
            for part in [&r.a_hat, &r.b_hat] {
                rec.extend(part.iter().copied().map(fmt));
            }
            rec.push(u8::from(r.saturated).to_string());
            rec.push(u8::from(r.in_layer).to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("log output is ASCII"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let first = text.lines().next().unwrap_or("");
        let version = first.strip_prefix("# schema=").and_then(|v| v.trim().parse::<u32>().ok());
        if version != Some(LOG_SCHEMA_VERSION) {
            return Err(Error::LogParse {
                line: 1,
                message: format!("expected `# schema={LOG_SCHEMA_VERSION}` header line"),
            });
        }
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_err(2, e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        let shape = LogShape::from_header(&header).ok_or_else(|| parse_err(2, "unrecognized column layout".into()))?;
        let width = header.len();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != width {
                return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(line, format!("bad number: {e}")))?;
            let mut it = vals.into_iter();
            let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
            let t = take(1)[0];
            let q = take(shape.dof);
            let qdot = take(shape.dof);
            let p = take(shape.chambers);
            let x = take(3);
            let e = take(shape.error_dim);
            let s = take(shape.dof);
            let v = take(1)[0];
            let a_hat = take(shape.coefficients);
            let b_hat = take(shape.bound_count());
            let flags = take(2);
            if let Some(prev) = rows.last().map(|r: &LogRow| r.t) {
                if !(t > prev) {
                    return Err(parse_err(line, "timestamps must be strictly increasing".into()));
                }
            }
            rows.push(LogRow {
                t,
                q,
                qdot,
                p,
                tip: [x[0], x[1], x[2]],
                e,
                s,
                v,
                a_hat,
                b_hat,
                saturated: flags[0] != 0.0,
                in_layer: flags[1] != 0.0,
            });
        }
        Ok(Self { shape, rows })
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn parse_err(line: u64, message: String) -> Error {
    Error::LogParse { line, message }
}

/// `V = 1/2 s^T M s + 1/2 a~^T Gamma^-1 a~ + 1/2 b~^T Psi^-1 b~` with the
/// plant's true inertia, coefficients and declared disturbance bound.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_value(
    plant: &PlantTruth,
    t: f64,
    q: &DVector<f64>,
    s: &DVector<f64>,
    a_hat: &DVector<f64>,
    b_hat: &DVector<f64>,
    gamma: &[f64],
    psi: &[f64],
) -> Result<f64> {
    let model = plant.model_at(t);
    let m = inertia_matrix(&model, q)?;
    let a = CoefficientVector::from_parameters(&model.params).values;
    let kinetic = 0.5 * s.dot(&(m * s));
    let coeff: f64 = (0..a.len()).map(|k| 0.5 * (a_hat[k] - a[k]).powi(2) / gamma[k]).sum();
    let bound: f64 = (0..b_hat.len())
        .map(|i| 0.5 * (b_hat[i] - plant.disturbance_bound[i]).powi(2) / psi[i])
        .sum();
    Ok(kinetic + coeff + bound)
}

fn derivative(plant: &PlantTruth, t: f64, q: &DVector<f64>, qdot: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    let model = plant.model_at(t);
    forward_dynamics(&model, q, qdot, p, &plant.disturbance_at(t))
}

/// One classical RK4 step of `(q, qd)` under constant pressures.
pub fn rk4_step(
    plant: &PlantTruth,
    t: f64,
    dt: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let h = 0.5 * dt;
    let a1 = derivative(plant, t, q, qdot, p)?;
    let v2 = qdot + &a1 * h;
    let a2 = derivative(plant, t + h, &(q + qdot * h), &v2, p)?;
    let v3 = qdot + &a2 * h;
    let a3 = derivative(plant, t + h, &(q + &v2 * h), &v3, p)?;
    let v4 = qdot + &a3 * dt;
    let a4 = derivative(plant, t + dt, &(q + &v3 * dt), &v4, p)?;
    let q_next = q + (qdot + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let qdot_next = qdot + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    Ok((q_next, qdot_next))
}

/// Closed-loop run. Rows are logged at controller ticks
/// `t_k = k / controller_rate`, `k = 0..N` (every `log_every`-th), holding the tick's pressures
/// for the following `substeps` physics steps. `phi` is integrated without
/// wrapping.
pub fn integrate(
    plant: &PlantTruth,
    controller: &mut dyn Controller,
    trajectory: &dyn Trajectory,
    cfg: &SimConfig,
    q0: &DVector<f64>,
    qdot0: &DVector<f64>,
) -> Result<TrajectoryLog> {
    plant.validate()?;
    let substeps = cfg.substeps()?;
    let dof = plant.model.dof();
    if q0.len() != dof || qdot0.len() != dof {
        return Err(Error::invalid("initial state does not match the arm"));
    }
    let period = 1.0 / cfg.controller_rate;
    let dt = period / substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.measurement_noise > 0.0 {
        Some(Normal::new(0.0, cfg.measurement_noise).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let mut q = q0.clone();
    let mut qdot = qdot0.clone();
    let mut rows = Vec::with_capacity(cfg.tick_count() / cfg.log_every + 1);
    let mut shape = None;
    for k in 0..cfg.tick_count() {
        let t = k as f64 * period;
        let mut q_meas = q.clone();
        if let Some(n) = &noise {
            for v in q_meas.iter_mut() {
                *v += n.sample(&mut rng);
            }
        }
        let before = controller
            .adaptation()
            .map(|(st, gains)| (st.a_hat.values.clone(), st.b_hat.clone(), gains.gamma.clone(), gains.psi.clone()));
        let desired = trajectory.sample(t);
        let out = controller
            .step(t, &q_meas, &qdot, &desired, period)
            .map_err(|e| Error::Simulation { t, source: Box::new(e) })?;

        let v = match (&before, &out.s) {
            (Some((a, b, gamma, psi)), Some(s)) => {
                lyapunov_value(plant, t, &q, s, a, b, gamma, psi).map_err(|e| Error::Simulation { t, source: Box::new(e) })?
            }
            _ => f64::NAN,
        };
        let (a_hat, b_hat) = match &before {
            Some((a, b, ..)) => (a.as_slice().to_vec(), b.as_slice().to_vec()),
            None => (Vec::new(), Vec::new()),
        };
        let this_shape = LogShape {
            dof,
            chambers: out.pressures.len(),
            error_dim: out.error.len(),
            coefficients: a_hat.len(),
        };
        if *shape.get_or_insert(this_shape) != this_shape {
            return Err(Error::Simulation {
                t,
                source: Box::new(Error::invalid("controller output changed shape mid-run")),
            });
        }
        let tip = tip_position(&plant.model.geometry, &q).map_err(|e| Error::Simulation { t, source: Box::new(e) })?;
        if k % cfg.log_every == 0 {
            rows.push(LogRow {
                t,
                q: q_meas.as_slice().to_vec(),
                qdot: qdot.as_slice().to_vec(),
                p: out.pressures.as_slice().to_vec(),
                tip: [tip.x, tip.y, tip.z],
                e: out.error.as_slice().to_vec(),
                s: out.s.as_ref().map_or(vec![f64::NAN; dof], |s| s.as_slice().to_vec()),
                v,
                a_hat,
                b_hat,
                saturated: out.saturated,
                in_layer: out.in_layer,
            });
        }

        for j in 0..substeps {
            let ts = t + j as f64 * dt;
            let (qn, vn) = rk4_step(plant, ts, dt, &q, &qdot, &out.pressures).map_err(|e| Error::Simulation {
                t: ts,
                source: Box::new(e),
            })?;
            if qn.iter().chain(vn.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteState {
                    t: ts + dt,
                    q: q.as_slice().to_vec(),
                });
            }
            q = qn;
            qdot = vn;
        }
    }
    let shape = shape.unwrap_or(LogShape {
        dof,
        chambers: plant.model.chamber_count(),
        error_dim: 0,
        coefficients: 0,
    });
    Ok(TrajectoryLog { shape, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// `||e||` below which the reference counts as reached.
    pub reach_threshold: f64,
    /// Start of the RMS window; `None` means the first tick inside the
    /// boundary layer (or the whole log if that never happens).
    pub window_start: Option<f64>,
    /// Slack on per-tick increases of `V`.
    pub v_slack: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            reach_threshold: 1e-3,
            window_start: None,
            v_slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rms_error: f64,
    pub max_error: f64,
    pub reach_time: Option<f64>,
    /// Ticks outside the boundary layer after which `V` grew by more than
    /// the slack.
    pub v_monotone_violations: usize,
    pub saturation_fraction: f64,
    pub window_start: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn metrics(log: &TrajectoryLog, cfg: &MetricsConfig) -> Result<Metrics> {
    let rows = &log.rows;
    if rows.is_empty() {
        return Err(Error::invalid("metrics need a non-empty log"));
    }
    let window_start = cfg
        .window_start
        .or_else(|| rows.iter().find(|r| r.in_layer).map(|r| r.t))
        .unwrap_or(rows[0].t);
    let window: Vec<f64> = rows.iter().filter(|r| r.t >= window_start).map(|r| norm(&r.e)).collect();
    if window.is_empty() {
        return Err(Error::invalid("metrics window contains no samples"));
    }
    let rms_error = (window.iter().map(|e| e * e).sum::<f64>() / window.len() as f64).sqrt();
    let max_error = window.iter().cloned().fold(0.0, f64::max);
    let reach_time = rows.iter().find(|r| norm(&r.e) < cfg.reach_threshold).map(|r| r.t);
    let v_monotone_violations = rows
        .windows(2)
        .filter(|w| !w[0].in_layer && w[0].v.is_finite() && w[1].v - w[0].v > cfg.v_slack)
        .count();
    let saturation_fraction = rows.iter().filter(|r| r.saturated).count() as f64 / rows.len() as f64;
    Ok(Metrics {
        rms_error,
        max_error,
        reach_time,
        v_monotone_violations,
        saturation_fraction,
        window_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicParameters;
    use crate::kinematics::SegmentGeometry;

    fn model(gravity: f64, stiffness: f64, damping: f64) -> ArmModel {
        ArmModel::new(
            vec![SegmentGeometry::new(0.15, 0.012, 3e-4).unwrap(); 2],
            DynamicParameters {
                masses: vec![0.03, 0.025],
                stiffness: vec![stiffness; 2],
                damping: vec![damping; 2],
                gravity,
                tip_payload_mass: 0.0,
            },
        )
        .unwrap()
    }

    fn feed_forward(amplitude: f64) -> FeedForward {
        FeedForward {
            amplitude,
            period: 16.0,
            chambers_per_segment: vec![3, 3],
        }
    }

    #[test]
    fn pressure_profile_values() {
        assert_eq!(pressure_profile(0.0, 40e3, 16.0, 0), 0.0);
        assert!((pressure_profile(4.0, 40e3, 16.0, 0) - 40e3).abs() < 1e-9);
        for k in 0..50 {
            let t = k as f64 * 0.37;
            let sum: f64 = (0..3).map(|i| pressure_profile(t, 40e3, 16.0, i)).sum();
            assert!((sum - 60e3).abs() < 1e-8);
        }
    }

    #[test]
    fn circle_values() {
        let c = Vector3::new(0.01, -0.02, 0.26);
        let d = circle_trajectory(0.0, 0.12, 0.785, &c);
        assert_eq!(d.x, c + Vector3::new(0.12, 0.0, 0.0));
        assert_eq!(d.xdot, Vector3::new(0.0, 0.12 * 0.785, 0.0));
        let h = 1e-5;
        for k in 0..20 {
            let t = k as f64 * 0.61;
            let d = circle_trajectory(t, 0.12, 0.785, &c);
            assert!((d.xddot.norm() - 0.12 * 0.785 * 0.785).abs() < 1e-14);
            let fd = (circle_trajectory(t + h, 0.12, 0.785, &c).x - circle_trajectory(t - h, 0.12, 0.785, &c).x) / (2.0 * h);
            assert!((fd - d.xdot).norm() < 1e-9);
        }
        assert!(CircleTrajectory::new(c, 0.0, 1.0).is_err());
    }

    #[test]
    fn config_checks_rates() {
        let cfg = SimConfig::new(1.0, 100.0);
        assert_eq!(cfg.substeps().unwrap(), 100);
        assert_eq!(cfg.tick_count(), 100);
        assert!(SimConfig::new(1.0, 300.0).substeps().is_err());
        assert!(SimConfig::new(1.0, 2e4).substeps().is_err());
        let mut cfg = SimConfig::new(1.0, 100.0);
        cfg.log_every = 0;
        assert!(cfg.substeps().is_err());
    }

    #[test]
    fn disturbance_schedule() {
        let step = Disturbance::Step {
            time: 1.0,
            value: vec![0.1, -0.2, 0.0, 0.0],
        };
        assert_eq!(step.at(0.5), DVector::zeros(4));
        assert_eq!(step.at(1.0)[1], -0.2);
        let sine = Disturbance::Sinusoid {
            amplitude: vec![0.0, 0.3, 0.0, 0.0],
            omega: 2.0,
            phase: 0.0,
        };
        assert!(sine.at(0.3)[1].abs() <= sine.bound()[1]);

        let plant = PlantTruth::new(model(9.81, 0.1, 0.01)).with_disturbance(step.clone());
        assert!(plant.validate().is_ok());
        let mut tight = plant.clone();
        tight.disturbance_bound[1] = 0.1;
        assert!(tight.validate().is_err());
    }

    #[test]
    fn zero_input_keeps_state() {
        let plant = PlantTruth::new(model(0.0, 0.0, 0.0));
        let q0 = DVector::from_vec(vec![0.4, 0.7, -0.3, 0.2]);
        let log = integrate(
            &plant,
            &mut feed_forward(0.0),
            &Setpoint(q0.clone()),
            &SimConfig::new(0.2, 100.0),
            &q0,
            &DVector::zeros(4),
        )
        .unwrap();
        for r in &log.rows {
            assert_eq!(r.q, q0.as_slice());
            assert!(r.qdot.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Planar swing: the bending planes stay at zero by symmetry.
        let plant = PlantTruth::new(model(9.81, 0.1, 0.0));
        let q0 = DVector::from_vec(vec![0.0, 0.5, 0.0, 0.5]);
        let v0 = DVector::zeros(4);
        let p = DVector::zeros(6);
        let run = |dt: f64| {
            let (mut q, mut v) = (q0.clone(), v0.clone());
            let steps = (0.5 / dt).round() as usize;
            for k in 0..steps {
                (q, v) = rk4_step(&plant, k as f64 * dt, dt, &q, &v, &p).unwrap();
            }
            q
        };
        let reference = run(6.25e-5);
        let coarse = (run(1e-3) - &reference).norm();
        let fine = (run(5e-4) - &reference).norm();
        let ratio = coarse / fine;
        assert!((8.0..=32.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn noisy_runs_repeat_with_the_same_seed() {
        let plant = PlantTruth::new(model(9.81, 0.1, 0.01));
        let q0 = DVector::from_vec(vec![3.0, 0.2, 3.0, 0.2]);
        let mut cfg = SimConfig::new(0.3, 100.0);
        cfg.measurement_noise = 1e-3;
        cfg.seed = 42;
        let run = |cfg: &SimConfig| {
            integrate(&plant, &mut feed_forward(40e3), &Setpoint(q0.clone()), cfg, &q0, &DVector::zeros(4))
                .unwrap()
                .to_csv_string()
                .unwrap()
        };
        let a = run(&cfg);
        assert_eq!(a, run(&cfg));
        cfg.seed = 43;
        assert_ne!(a, run(&cfg));
    }

    fn row(t: f64, e: Vec<f64>) -> LogRow {
        LogRow {
            t,
            q: vec![0.1, 0.2],
            qdot: vec![0.0, -1.5e-7],
            p: vec![1.0, 2.0, 3.0],
            tip: [0.0, 0.1, 0.2],
            e,
            s: vec![f64::NAN, 0.5],
            v: f64::NAN,
            a_hat: vec![0.25, 1.0 / 3.0, 0.0, 0.0],
            b_hat: vec![0.0, 1e-300],
            saturated: t > 0.5,
            in_layer: false,
        }
    }

    fn log(rows: Vec<LogRow>) -> TrajectoryLog {
        TrajectoryLog {
            shape: LogShape {
                dof: 2,
                chambers: 3,
                error_dim: 2,
                coefficients: 4,
            },
            rows,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let original = log((0..4).map(|k| row(k as f64 * 0.3, vec![0.1 * k as f64, -1.0 / 7.0])).collect());
        let text = original.to_csv_string().unwrap();
        assert!(text.starts_with("# schema=1\n"));
        let back = TrajectoryLog::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.shape, original.shape);
        assert_eq!(back.to_csv_string().unwrap(), text);
        assert_eq!(back.rows[2].a_hat[1].to_bits(), (1.0f64 / 3.0).to_bits());
        assert!(back.rows[0].s[0].is_nan());
    }

    #[test]
    fn csv_round_trip_without_estimates() {
        let mut original = log((0..3).map(|k| row(k as f64 * 0.3, vec![])).collect());
        original.shape.coefficients = 0;
        original.shape.error_dim = 0;
        for r in &mut original.rows {
            r.a_hat.clear();
            r.b_hat.clear();
        }
        let text = original.to_csv_string().unwrap();
        assert!(!text.contains("bhat"));
        let back = TrajectoryLog::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.to_csv_string().unwrap(), text);
        assert!(back.rows[2].saturated);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = log(vec![row(0.0, vec![0.0; 2]), row(0.1, vec![0.0; 2])]).to_csv_string().unwrap();
        let bad = text.replacen("# schema=1", "# schema=9", 1);
        assert!(TrajectoryLog::read_csv(bad.as_bytes()).is_err());

        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(2, 3);
        let swapped = lines.join("\n");
        match TrajectoryLog::read_csv(swapped.as_bytes()) {
            Err(Error::LogParse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected a parse error, got {other:?}"),
        }

        let garbled = text.replacen("1.0000000000000000e0", "one", 1);
        assert!(matches!(TrajectoryLog::read_csv(garbled.as_bytes()), Err(Error::LogParse { .. })));
    }

    #[test]
    fn metrics_examples() {
        let perfect = log((0..10).map(|k| row(k as f64 * 0.1, vec![0.0; 2])).collect());
        let m = metrics(&perfect, &MetricsConfig::default()).unwrap();
        assert_eq!(m.rms_error, 0.0);
        assert_eq!(m.reach_time, Some(0.0));
        assert!((m.saturation_fraction - 0.4).abs() < 1e-12);

        let offset = log((0..10).map(|k| row(k as f64 * 0.1, vec![0.03, -0.04])).collect());
        let m = metrics(&offset, &MetricsConfig::default()).unwrap();
        assert!((m.rms_error - 0.05).abs() < 1e-15);
        assert!((m.max_error - 0.05).abs() < 1e-15);
        assert_eq!(m.reach_time, None);

        assert!(metrics(&log(Vec::new()), &MetricsConfig::default()).is_err());
    }

    #[test]
    fn metrics_count_lyapunov_increases_outside_layer() {
        let mut rows: Vec<LogRow> = (0..5).map(|k| row(k as f64, vec![0.0; 2])).collect();
        for (r, v) in rows.iter_mut().zip([1.0, 0.9, 0.95, 0.94, 1.2]) {
            r.v = v;
        }
        rows[3].in_layer = true;
        let m = metrics(&log(rows), &MetricsConfig::default()).unwrap();
        assert_eq!(m.v_monotone_violations, 1);
    }
}
