//! Adaptive terminal-sliding-mode controllers and an inverse-dynamics
//! benchmark, in curvature space and task space.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{actuator_map, dynamic_terms, regressor, ArmModel, CoefficientVector};
use crate::error::{Error, Result};
use crate::kinematics::{damped_pinv, jacobian_time_derivative, ArmKinematics, DampedPinvConfig, SegmentGeometry};

/// Floor on `|e|` before raising it to `alpha - 1`.
pub const DEFAULT_E_CLAMP: f64 = 1e-6;

/// `|x|^alpha * sign(x)`.
pub fn sig(x: f64, alpha: f64) -> f64 {
    x.abs().powf(alpha).copysign(x)
}

/// Elementwise [`sig`].
pub fn sig_alpha(x: &DVector<f64>, alpha: f64) -> DVector<f64> {
    x.map(|v| sig(v, alpha))
}

/// Unit saturation: `x` inside `[-1, 1]`, `sign(x)` outside.
pub fn sat(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Component of `s` outside the boundary layer; zero inside it.
pub fn boundary_layer_excess(s: &DVector<f64>, layer: &DVector<f64>) -> DVector<f64> {
    s.zip_map(layer, |si, w| if si.abs() <= w { 0.0 } else { si - w * si.signum() })
}

/// Box constraint applied to the coefficient estimate after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingParams {
    /// Surface gain, one entry per tracked coordinate (2n in curvature
    /// space, 3 in task space).
    pub lambda: Vec<f64>,
    pub alpha: f64,
    /// Feedback gain on `s`, one entry per generalized coordinate.
    pub k_d: Vec<f64>,
    /// Coefficient adaptation gains.
    pub gamma: Vec<f64>,
    /// Disturbance-bound adaptation gains.
    pub psi: Vec<f64>,
    pub boundary_layer: Vec<f64>,
    pub e_clamp: f64,
    #[serde(default)]
    pub projection: Option<ParameterBox>,
}

impl SlidingParams {
    /// Surface and feedback gains `Lambda = 6.3`, `alpha = 0.75`,
    /// `K_D = 0.03` with the given adaptation gains and layer thickness.
    pub fn with_defaults(tracked: usize, dof: usize, gamma: Vec<f64>, psi: f64, boundary_layer: f64) -> Self {
        Self {
            lambda: vec![6.3; tracked],
            alpha: 0.75,
            k_d: vec![0.03; dof],
            gamma,
            psi: vec![psi; dof],
            boundary_layer: vec![boundary_layer; dof],
            e_clamp: DEFAULT_E_CLAMP,
            projection: None,
        }
    }

    pub fn validate(&self, tracked: usize, dof: usize, coefficients: usize) -> Result<()> {
        let lens = [
            ("lambda", self.lambda.len(), tracked),
            ("k_d", self.k_d.len(), dof),
            ("gamma", self.gamma.len(), coefficients),
            ("psi", self.psi.len(), dof),
            ("boundary_layer", self.boundary_layer.len(), dof),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::invalid(format!("{name} has {got} entries, expected {want}")));
            }
        }
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !positive(&self.lambda)
            || !positive(&self.k_d)
            || !positive(&self.gamma)
            || !positive(&self.psi)
            || !positive(&self.boundary_layer)
        {
            return Err(Error::invalid("sliding gains and boundary layer must be positive and finite"));
        }
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0.5, 1), got {}", self.alpha)));
        }
        if !(self.e_clamp > 0.0) {
            return Err(Error::invalid("e_clamp must be > 0"));
        }
        if let Some(b) = &self.projection {
            if b.lower.len() != coefficients || b.upper.len() != coefficients {
                return Err(Error::invalid("projection box must cover every coefficient"));
            }
            if b.lower.iter().zip(&b.upper).any(|(l, u)| !(l <= u)) {
                return Err(Error::invalid("projection box needs lower <= upper"));
            }
        }
        Ok(())
    }
}

/// Desired generalized coordinates and derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTarget {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub qddot: DVector<f64>,
}

/// Desired tip position and derivatives (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTarget {
    pub x: Vector3<f64>,
    pub xdot: Vector3<f64>,
    pub xddot: Vector3<f64>,
}

/// One sample of a desired trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Desired {
    Joint(JointTarget),
    Task(TaskTarget),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignals {
    pub qdot_r: DVector<f64>,
    pub qddot_r: DVector<f64>,
    pub s: DVector<f64>,
    pub s_delta: DVector<f64>,
    /// Tracking error `desired - actual` in the tracked space.
    pub error: DVector<f64>,
    /// Task-space sliding variable, only for task references.
    pub s_bar: Option<DVector<f64>>,
}

fn terminal_terms(e: &DVector<f64>, e_dot: &DVector<f64>, lambda: &[f64], alpha: f64, e_clamp: f64) -> (DVector<f64>, DVector<f64>) {
    let vel = DVector::from_fn(e.len(), |i, _| lambda[i] * sig(e[i], alpha));
    let acc = DVector::from_fn(e.len(), |i, _| {
        alpha * lambda[i] * e[i].abs().max(e_clamp).powf(alpha - 1.0) * e_dot[i]
    });
    (vel, acc)
}

fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::invalid(format!("{what} has {} entries, expected {n}", v.len())));
    }
    Ok(())
}

/// `qd_r = qd_d + Lambda sig(q_d - q)`,
/// `qdd_r = qdd_d + alpha Lambda |q_d - q|^(alpha-1) (qd_d - qd)`.
pub fn curvature_reference(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    target: &JointTarget,
    params: &SlidingParams,
) -> Result<ReferenceSignals> {
    let dof = q.len();
    for (v, what) in [
        (qdot, "velocity"),
        (&target.q, "q_d"),
        (&target.qdot, "qdot_d"),
        (&target.qddot, "qddot_d"),
    ] {
        check_len(v, dof, what)?;
    }
    if params.lambda.len() != dof || params.boundary_layer.len() != dof {
        return Err(Error::invalid("curvature reference needs lambda and boundary layer sized 2n"));
    }
    let e = &target.q - q;
    let e_dot = &target.qdot - qdot;
    let (vel, acc) = terminal_terms(&e, &e_dot, &params.lambda, params.alpha, params.e_clamp);
    let qdot_r = &target.qdot + vel;
    let qddot_r = &target.qddot + acc;
    let s = qdot - &qdot_r;
    let s_delta = boundary_layer_excess(&s, &DVector::from_column_slice(&params.boundary_layer));
    Ok(ReferenceSignals {
        qdot_r,
        qddot_r,
        s,
        s_delta,
        error: e,
        s_bar: None,
    })
}

/// Task-space reference through the damped Jacobian pseudo-inverse:
/// `qd_r = J+ (xd_d + Lambda sig(x_d - x))`,
/// `qdd_r = J+ (xdd_d + alpha Lambda |x_d - x|^(alpha-1) (xd_d - xd) - Jdot qd_r)`.
pub fn task_reference(
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    geom: &[SegmentGeometry],
    target: &TaskTarget,
    params: &SlidingParams,
    pinv: &DampedPinvConfig,
) -> Result<ReferenceSignals> {
    check_len(qdot, q.len(), "velocity")?;
    if params.lambda.len() != 3 {
        return Err(Error::invalid("task reference needs a 3-entry lambda"));
    }
    if params.boundary_layer.len() != q.len() {
        return Err(Error::invalid("boundary layer must have one entry per coordinate"));
    }
    let kin = ArmKinematics::compute(geom, q)?;
    let j = &kin.tip_jacobian;
    let j_pinv = damped_pinv(j, pinv);
    let j_dot = jacobian_time_derivative(geom, q, qdot)?;

    let to_dv = |v: Vector3<f64>| DVector::from_column_slice(v.as_slice());
    let e = to_dv(target.x - kin.tip);
    let x_dot = j * qdot;
    let e_dot = to_dv(target.xdot) - &x_dot;
    let (vel, acc) = terminal_terms(&e, &e_dot, &params.lambda, params.alpha, params.e_clamp);

    let qdot_r = &j_pinv * (to_dv(target.xdot) + &vel);
    let qddot_r = &j_pinv * (to_dv(target.xddot) + acc - &j_dot * &qdot_r);
    let s = qdot - &qdot_r;
    let s_delta = boundary_layer_excess(&s, &DVector::from_column_slice(&params.boundary_layer));
    let s_bar = x_dot - to_dv(target.xdot) - vel;
    Ok(ReferenceSignals {
        qdot_r,
        qddot_r,
        s,
        s_delta,
        error: e,
        s_bar: Some(s_bar),
    })
}

/// Damped pseudo-inverse settings for the actuator map, scaled to the
/// chamber lever `area * offset` so damping engages below roughly
/// `epsilon_theta` rad of bend.
pub fn actuator_pinv_config(geom: &[SegmentGeometry], epsilon_theta: f64) -> DampedPinvConfig {
    let lever = geom
        .iter()
        .map(|g| g.chamber_area * g.chamber_offset * (g.chamber_count as f64 / 2.0).sqrt())
        .fold(f64::INFINITY, f64::min);
    DampedPinvConfig {
        epsilon: epsilon_theta * lever,
        lambda_max: 2.0 * epsilon_theta * lever,
    }
}

/// Maps a generalized-force command to chamber pressures: damped
/// pseudo-inverse of `A`, then per segment a common-mode shift (which `A`
/// ignores) so the lowest chamber sits at zero, then clamping to
/// `[0, p_max]`. Returns the pressures and whether the clamp was active.
pub fn allocate_pressures(
    geom: &[SegmentGeometry],
    q: &DVector<f64>,
    u: &DVector<f64>,
    pinv: &DampedPinvConfig,
    p_max: f64,
) -> Result<(DVector<f64>, bool)> {
    let a = actuator_map(geom, q)?;
    let mut p = damped_pinv(&a, pinv) * u;
    let mut start = 0;
    for g in geom {
        let mut seg = p.rows_mut(start, g.chamber_count);
        let low = seg.min();
        seg.add_scalar_mut(-low);
        start += g.chamber_count;
    }
    let mut saturated = false;
    for v in p.iter_mut() {
        if *v > p_max {
            *v = p_max;
            saturated = true;
        } else if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok((p, saturated))
}

fn ensure_finite(v: &DVector<f64>, stage: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::ControllerFault { stage })
    }
}

/// Online estimates: coefficients and per-coordinate disturbance bound.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub a_hat: CoefficientVector,
    pub b_hat: DVector<f64>,
}

impl AdaptiveState {
    pub fn new(a_hat: CoefficientVector) -> Self {
        let dof = 2 * a_hat.segment_count();
        Self {
            a_hat,
            b_hat: DVector::zeros(dof),
        }
    }
}

/// What a controller produced on one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub pressures: DVector<f64>,
    pub error: DVector<f64>,
    pub s: Option<DVector<f64>>,
    pub saturated: bool,
    /// Every `|s_i|` strictly inside its boundary layer.
    pub in_layer: bool,
}

/// `p = A+ (Y a_hat - K_D s - b_hat sat(s / layer))` followed by the
/// Euler-discretized adaptation `a_hat -= Gamma Y^T s_delta dt`,
/// `b_hat += Psi |s_delta| dt`. The regressor is always evaluated at
/// `(q, qd, qd_r, qdd_r)`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_control_step(
    state: &mut AdaptiveState,
    geom: &[SegmentGeometry],
    gravity: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    refs: &ReferenceSignals,
    params: &SlidingParams,
    actuator_pinv: &DampedPinvConfig,
    p_max: f64,
    dt: f64,
) -> Result<ControlOutput> {
    if !(dt > 0.0) {
        return Err(Error::invalid("control step needs dt > 0"));
    }
    let dof = q.len();
    ensure_finite(&refs.qdot_r, "reference")?;
    ensure_finite(&refs.qddot_r, "reference")?;
    let y = regressor(geom, gravity, q, qdot, &refs.qdot_r, &refs.qddot_r)?;
    let r = y.ncols();
    if state.a_hat.len() != r || state.b_hat.len() != dof {
        return Err(Error::invalid("adaptive state does not match the arm"));
    }

    let mut u = &y * &state.a_hat.values;
    for i in 0..dof {
        let s = refs.s[i];
        let w = params.boundary_layer[i];
        u[i] -= params.k_d[i] * s + state.b_hat[i] * sat(s / w);
    }
    ensure_finite(&u, "control law")?;
    let (pressures, saturated) = allocate_pressures(geom, q, &u, actuator_pinv, p_max)?;
    ensure_finite(&pressures, "pressure allocation")?;

    let in_layer = refs.s_delta.iter().all(|&v| v == 0.0);
    if !in_layer {
        let grad = y.transpose() * &refs.s_delta;
        let mut a = state.a_hat.values.clone();
        for k in 0..r {
            a[k] -= params.gamma[k] * grad[k] * dt;
        }
        if let Some(b) = &params.projection {
            for k in 0..r {
                a[k] = a[k].clamp(b.lower[k], b.upper[k]);
            }
        }
        ensure_finite(&a, "coefficient adaptation")?;
        state.a_hat.values = a;
        for i in 0..dof {
            state.b_hat[i] += params.psi[i] * refs.s_delta[i].abs() * dt;
        }
    }
    Ok(ControlOutput {
        pressures,
        error: refs.error.clone(),
        s: Some(refs.s.clone()),
        saturated,
        in_layer,
    })
}

/// A discrete-time pressure controller.
pub trait Controller {
    fn step(&mut self, t: f64, q: &DVector<f64>, qdot: &DVector<f64>, desired: &Desired, dt: f64) -> Result<ControlOutput>;

    /// Current estimates and gains, for controllers that adapt.
    fn adaptation(&self) -> Option<(&AdaptiveState, &SlidingParams)> {
        None
    }
}

/// Adaptive terminal-sliding-mode controller. The tracked space follows the
/// [`Desired`] variant handed to each step.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    pub geometry: Vec<SegmentGeometry>,
    pub gravity: f64,
    pub params: SlidingParams,
    pub task_pinv: DampedPinvConfig,
    pub actuator_pinv: DampedPinvConfig,
    pub p_max: f64,
    pub state: AdaptiveState,
}

impl AdaptiveController {
    pub fn new(
        geometry: Vec<SegmentGeometry>,
        gravity: f64,
        params: SlidingParams,
        task_pinv: DampedPinvConfig,
        initial_estimate: CoefficientVector,
        p_max: f64,
    ) -> Result<Self> {
        let dof = 2 * geometry.len();
        if initial_estimate.segment_count() != geometry.len() {
            return Err(Error::invalid("initial estimate does not match the arm"));
        }
        let tracked = params.lambda.len();
        if tracked != dof && tracked != 3 {
            return Err(Error::invalid("lambda must be sized 2n (curvature) or 3 (task)"));
        }
        params.validate(tracked, dof, initial_estimate.len())?;
        task_pinv.validate()?;
        if !(p_max > 0.0) {
            return Err(Error::invalid("p_max must be > 0"));
        }
        let actuator_pinv = actuator_pinv_config(&geometry, 0.05);
        Ok(Self {
            geometry,
            gravity,
            params,
            task_pinv,
            actuator_pinv,
            p_max,
            state: AdaptiveState::new(initial_estimate),
        })
    }
}

impl Controller for AdaptiveController {
    fn step(&mut self, _t: f64, q: &DVector<f64>, qdot: &DVector<f64>, desired: &Desired, dt: f64) -> Result<ControlOutput> {
        let refs = match desired {
            Desired::Joint(t) => curvature_reference(q, qdot, t, &self.params)?,
            Desired::Task(t) => task_reference(q, qdot, &self.geometry, t, &self.params, &self.task_pinv)?,
        };
        adaptive_control_step(
            &mut self.state,
            &self.geometry,
            self.gravity,
            q,
            qdot,
            &refs,
            &self.params,
            &self.actuator_pinv,
            self.p_max,
            dt,
        )
    }

    fn adaptation(&self) -> Option<(&AdaptiveState, &SlidingParams)> {
        Some((&self.state, &self.params))
    }
}

/// PD gains of the computed-torque benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseDynamicsGains {
    pub k_p: Vec<f64>,
    pub k_d: Vec<f64>,
    /// Damping on self-motion velocity in task space.
    #[serde(default)]
    pub null_damping: f64,
}

impl InverseDynamicsGains {
    /// `K_P = w^2`, `K_D = 2 w`: critically damped on the linearized
    /// double integrator.
    pub fn critically_damped(omega: f64, dim: usize, null_damping: f64) -> Self {
        Self {
            k_p: vec![omega * omega; dim],
            k_d: vec![2.0 * omega; dim],
            null_damping,
        }
    }
}

/// Computed-torque controller on the nominal, non-adapted model.
#[derive(Debug, Clone)]
pub struct InverseDynamicsController {
    pub model: ArmModel,
    pub gains: InverseDynamicsGains,
    pub task_pinv: DampedPinvConfig,
    pub actuator_pinv: DampedPinvConfig,
    pub p_max: f64,
}

impl InverseDynamicsController {
    pub fn new(model: ArmModel, gains: InverseDynamicsGains, task_pinv: DampedPinvConfig, p_max: f64) -> Result<Self> {
        if gains.k_p.len() != gains.k_d.len() {
            return Err(Error::invalid("k_p and k_d must have equal length"));
        }
        if gains.k_p.iter().chain(&gains.k_d).any(|&g| !(g >= 0.0)) || !(gains.null_damping >= 0.0) {
            return Err(Error::invalid("inverse-dynamics gains must be >= 0"));
        }
        task_pinv.validate()?;
        if !(p_max > 0.0) {
            return Err(Error::invalid("p_max must be > 0"));
        }
        let actuator_pinv = actuator_pinv_config(&model.geometry, 0.05);
        Ok(Self {
            model,
            gains,
            task_pinv,
            actuator_pinv,
            p_max,
        })
    }

    /// Commanded generalized acceleration and the tracking error.
    fn commanded_acceleration(&self, q: &DVector<f64>, qdot: &DVector<f64>, desired: &Desired) -> Result<(DVector<f64>, DVector<f64>)> {
        let g = &self.gains;
        match desired {
            Desired::Joint(t) => {
                let dof = q.len();
                if g.k_p.len() != dof {
                    return Err(Error::invalid("joint gains must have 2n entries"));
                }
                check_len(&t.q, dof, "q_d")?;
                let e = &t.q - q;
                let e_dot = &t.qdot - qdot;
                let acc = DVector::from_fn(dof, |i, _| t.qddot[i] + g.k_p[i] * e[i] + g.k_d[i] * e_dot[i]);
                Ok((acc, e))
            }
            Desired::Task(t) => {
                if g.k_p.len() != 3 {
                    return Err(Error::invalid("task gains must have 3 entries"));
                }
                let kin = ArmKinematics::compute(&self.model.geometry, q)?;
                let j = &kin.tip_jacobian;
                let j_pinv = damped_pinv(j, &self.task_pinv);
                let j_dot = jacobian_time_derivative(&self.model.geometry, q, qdot)?;
                let e = t.x - kin.tip;
                let e_dot = t.xdot - Vector3::from_column_slice((j * qdot).as_slice());
                let x_acc = Vector3::from_fn(|i, _| t.xddot[i] + g.k_p[i] * e[i] + g.k_d[i] * e_dot[i]);
                let x_acc = DVector::from_column_slice(x_acc.as_slice()) - &j_dot * qdot;
                let dof = q.len();
                let null = DMatrix::identity(dof, dof) - &j_pinv * j;
                let acc = &j_pinv * x_acc - null * qdot * g.null_damping;
                Ok((acc, DVector::from_column_slice(e.as_slice())))
            }
        }
    }
}

impl Controller for InverseDynamicsController {
    fn step(&mut self, _t: f64, q: &DVector<f64>, qdot: &DVector<f64>, desired: &Desired, _dt: f64) -> Result<ControlOutput> {
        let (acc, error) = self.commanded_acceleration(q, qdot, desired)?;
        ensure_finite(&acc, "reference")?;
        let terms = dynamic_terms(&self.model, q, qdot)?;
        let u = terms.left_side(qdot, &acc);
        ensure_finite(&u, "control law")?;
        let (pressures, saturated) = allocate_pressures(&self.model.geometry, q, &u, &self.actuator_pinv, self.p_max)?;
        ensure_finite(&pressures, "pressure allocation")?;
        Ok(ControlOutput {
            pressures,
            error,
            s: None,
            saturated,
            in_layer: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicParameters;
    use crate::kinematics::SegmentGeometry;

    fn geom() -> Vec<SegmentGeometry> {
        vec![SegmentGeometry::new(0.15, 0.012, 3e-4).unwrap(); 2]
    }

    fn truth() -> CoefficientVector {
        CoefficientVector::from_parameters(&DynamicParameters {
            masses: vec![0.03, 0.025],
            stiffness: vec![0.124, 0.083],
            damping: vec![0.011, 0.009],
            gravity: 9.81,
            tip_payload_mass: 0.0,
        })
    }

    fn params(tracked: usize) -> SlidingParams {
        SlidingParams::with_defaults(tracked, 4, vec![0.01; 7], 0.01, 0.05)
    }

    #[test]
    fn sig_values() {
        assert_eq!(sig(0.0, 0.75), 0.0);
        for a in [0.6, 0.75, 0.9] {
            assert_eq!(sig(1.0, a), 1.0);
        }
        // 0.25^0.75 = 2^-1.5
        let want = -1.0 / (2.0 * 2f64.sqrt());
        assert!((sig(-0.25, 0.75) - want).abs() < 1e-15);
        assert!((sig(-0.25, 0.75) + 0.35355).abs() < 1e-5);
    }

    #[test]
    fn sig_is_odd_and_monotone() {
        let xs: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.013).collect();
        for w in xs.windows(2) {
            assert!(sig(w[1], 0.75) > sig(w[0], 0.75));
        }
        for &x in &xs {
            assert_eq!(sig(-x, 0.6), -sig(x, 0.6));
        }
    }

    #[test]
    fn sat_is_exact() {
        assert_eq!(sat(0.3), 0.3);
        assert_eq!(sat(-0.999), -0.999);
        assert_eq!(sat(1.0), 1.0);
        assert_eq!(sat(-1.0), -1.0);
        assert_eq!(sat(7.0), 1.0);
        assert_eq!(sat(-1e9), -1.0);
    }

    #[test]
    fn boundary_layer_excess_is_zero_inside() {
        let s = DVector::from_vec(vec![0.04, -0.05, 0.07, -0.2]);
        let w = DVector::from_element(4, 0.05);
        let d = boundary_layer_excess(&s, &w);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 0.02).abs() < 1e-15);
        assert!((d[3] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn params_validation() {
        assert!(params(4).validate(4, 4, 7).is_ok());
        let mut p = params(4);
        p.alpha = 0.5;
        assert!(p.validate(4, 4, 7).is_err());
        let mut p = params(4);
        p.k_d[2] = 0.0;
        assert!(p.validate(4, 4, 7).is_err());
        let mut p = params(4);
        p.e_clamp = 0.0;
        assert!(p.validate(4, 4, 7).is_err());
        assert!(params(4).validate(4, 4, 6).is_err());
    }

    #[test]
    fn curvature_reference_on_target() {
        let q = DVector::from_vec(vec![0.3, 0.5, -1.0, 0.2]);
        let qd = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
        let target = JointTarget {
            q: q.clone(),
            qdot: qd.clone(),
            qddot: DVector::from_element(4, 0.7),
        };
        let r = curvature_reference(&q, &qd, &target, &params(4)).unwrap();
        assert_eq!(r.qdot_r, qd);
        assert_eq!(r.s, DVector::zeros(4));
        assert_eq!(r.s_delta, DVector::zeros(4));
        assert!(r.qddot_r.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn curvature_reference_linear_limit() {
        let mut p = params(4);
        p.alpha = 1.0 - 1e-9;
        let q = DVector::from_vec(vec![0.3, 0.5, -1.0, 0.2]);
        let qdot = DVector::from_vec(vec![0.2, 0.1, 0.0, -0.3]);
        let target = JointTarget {
            q: DVector::from_vec(vec![0.4, 0.3, -0.7, 0.25]),
            qdot: DVector::from_vec(vec![0.0, 0.1, 0.2, 0.1]),
            qddot: DVector::zeros(4),
        };
        let r = curvature_reference(&q, &qdot, &target, &p).unwrap();
        let e = &target.q - &q;
        let e_dot = &target.qdot - &qdot;
        let linear = -(e_dot + e * 6.3);
        assert!((&r.s - linear).amax() < 1e-7);
        assert!((&r.s - (&qdot - &r.qdot_r)).amax() == 0.0);
    }

    #[test]
    fn terminal_error_reaches_zero_in_finite_time() {
        // e' = -sig(e), e(0) = 1, alpha = 0.75: t_f = 1 / (1 - 0.75) = 4 s.
        let f = |e: f64| -sig(e, 0.75);
        let dt = 1e-5;
        let mut e: f64 = 1.0;
        let mut t = 0.0;
        while e.abs() >= 1e-6 && t < 10.0 {
            let k1 = f(e);
            let k2 = f(e + 0.5 * dt * k1);
            let k3 = f(e + 0.5 * dt * k2);
            let k4 = f(e + dt * k3);
            e += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += dt;
        }
        assert!(t <= 4.0 * 1.01, "reached at {t}");
        assert!(t > 4.0 * 0.9, "reached at {t}");
    }

    fn bent() -> DVector<f64> {
        DVector::from_vec(vec![0.4, 0.6, 1.2, 0.5])
    }

    #[test]
    fn task_reference_zero_surface_on_target() {
        let g = geom();
        let q = bent();
        let qdot = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3]);
        let kin = ArmKinematics::compute(&g, &q).unwrap();
        let xdot = &kin.tip_jacobian * &qdot;
        let target = TaskTarget {
            x: kin.tip,
            xdot: Vector3::from_column_slice(xdot.as_slice()),
            xddot: Vector3::zeros(),
        };
        let pinv = DampedPinvConfig {
            epsilon: 1e-4,
            lambda_max: 1e-3,
        };
        let r = task_reference(&q, &qdot, &g, &target, &params(3), &pinv).unwrap();
        assert!(r.s_bar.unwrap().amax() < 1e-14);
        assert!(r.error.amax() == 0.0);
    }

    #[test]
    fn task_reference_velocity_is_realized() {
        let g = geom();
        let q = bent();
        let qdot = DVector::zeros(4);
        let kin = ArmKinematics::compute(&g, &q).unwrap();
        let target = TaskTarget {
            x: kin.tip + Vector3::new(0.004, -0.002, 0.001),
            xdot: Vector3::new(0.01, 0.02, 0.0),
            xddot: Vector3::zeros(),
        };
        let p = params(3);
        let pinv = DampedPinvConfig {
            epsilon: 1e-4,
            lambda_max: 1e-3,
        };
        let r = task_reference(&q, &qdot, &g, &target, &p, &pinv).unwrap();
        let want = DVector::from_fn(3, |i, _| target.xdot[i] + p.lambda[i] * sig(target.x[i] - kin.tip[i], p.alpha));
        let got = &kin.tip_jacobian * &r.qdot_r;
        assert!((got - want).amax() < 1e-10);
    }

    #[test]
    fn task_reference_bounded_at_straight_pose() {
        let g = geom();
        let q = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0]);
        let qdot = DVector::zeros(4);
        let kin = ArmKinematics::compute(&g, &q).unwrap();
        let target = TaskTarget {
            x: kin.tip + Vector3::new(0.05, 0.0, -0.02),
            xdot: Vector3::new(0.1, 0.0, 0.0),
            xddot: Vector3::zeros(),
        };
        let p = params(3);
        let pinv = DampedPinvConfig::default();
        let r = task_reference(&q, &qdot, &g, &target, &p, &pinv).unwrap();
        assert!(r.qdot_r.iter().chain(r.qddot_r.iter()).all(|v| v.is_finite()));
        let v = DVector::from_fn(3, |i, _| target.xdot[i] + p.lambda[i] * sig(target.x[i] - kin.tip[i], p.alpha));
        // A damped inverse never amplifies by more than 1 / (2 lambda_max).
        assert!(r.qdot_r.norm() <= v.norm() / (2.0 * pinv.lambda_max) + 1e-12);
    }

    #[test]
    fn allocation_realizes_force_when_unclamped() {
        let g = geom();
        let q = bent();
        let u = DVector::from_vec(vec![1e-3, -2e-2, 5e-4, 1e-2]);
        let pinv = actuator_pinv_config(&g, 0.05);
        let (p, saturated) = allocate_pressures(&g, &q, &u, &pinv, 40e3).unwrap();
        assert!(!saturated);
        assert!(p.iter().all(|&v| v >= 0.0));
        let a = actuator_map(&g, &q).unwrap();
        assert!((&a * &p - &u).amax() < 1e-12);
        for seg in 0..2 {
            assert_eq!(p.rows(3 * seg, 3).min(), 0.0);
        }
    }

    #[test]
    fn allocation_clamps_to_ceiling() {
        let g = geom();
        let u = DVector::from_vec(vec![0.0, -10.0, 0.0, -10.0]);
        let (p, saturated) = allocate_pressures(&g, &bent(), &u, &actuator_pinv_config(&g, 0.05), 40e3).unwrap();
        assert!(saturated);
        assert!(p.iter().all(|&v| (0.0..=40e3).contains(&v)));
    }

    fn step_with(s_scale: f64, dt: f64) -> (AdaptiveState, AdaptiveState, Result<ControlOutput>) {
        let g = geom();
        let q = bent();
        let p = params(4);
        let qdot_r = DVector::from_vec(vec![0.1, 0.2, -0.1, 0.05]);
        let s = DVector::from_vec(vec![1.0, -0.5, 0.8, -0.2]) * s_scale;
        let qdot = &qdot_r + &s;
        let refs = ReferenceSignals {
            qdot_r,
            qddot_r: DVector::from_element(4, 0.3),
            s_delta: boundary_layer_excess(&s, &DVector::from_column_slice(&p.boundary_layer)),
            s,
            error: DVector::zeros(4),
            s_bar: None,
        };
        let mut est = truth();
        est.values *= 0.5;
        let before = AdaptiveState::new(est);
        let mut state = before.clone();
        let out = adaptive_control_step(
            &mut state,
            &g,
            9.81,
            &q,
            &qdot,
            &refs,
            &p,
            &actuator_pinv_config(&g, 0.05),
            40e3,
            dt,
        );
        (before, state, out)
    }

    #[test]
    fn adaptation_freezes_inside_layer() {
        let (before, after, out) = step_with(0.04, 1e-3);
        let out = out.unwrap();
        assert!(out.in_layer);
        assert_eq!(before, after);
    }

    #[test]
    fn bound_estimate_grows_by_one_euler_step() {
        let (before, after, out) = step_with(1.0, 1e-3);
        assert!(!out.unwrap().in_layer);
        let s: [f64; 4] = [1.0, -0.5, 0.8, -0.2];
        for (i, si) in s.into_iter().enumerate() {
            let want = 0.01 * (si - 0.05 * si.signum()).abs() * 1e-3;
            assert!((after.b_hat[i] - want).abs() < 1e-18);
            assert!(after.b_hat[i] > before.b_hat[i]);
        }
        assert_ne!(before.a_hat, after.a_hat);
    }

    #[test]
    fn control_step_rejects_bad_dt() {
        let (_, _, out) = step_with(1.0, 0.0);
        assert!(matches!(out, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn controller_fault_names_the_stage() {
        let g = geom();
        let p = params(4);
        let q = bent();
        let refs = ReferenceSignals {
            qdot_r: DVector::zeros(4),
            qddot_r: DVector::from_element(4, f64::NAN),
            s: DVector::zeros(4),
            s_delta: DVector::zeros(4),
            error: DVector::zeros(4),
            s_bar: None,
        };
        let mut state = AdaptiveState::new(truth());
        let err = adaptive_control_step(
            &mut state,
            &g,
            9.81,
            &q,
            &DVector::zeros(4),
            &refs,
            &p,
            &actuator_pinv_config(&g, 0.05),
            40e3,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ControllerFault { stage: "reference" }));
    }
}
