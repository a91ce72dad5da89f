//! Reference arm and experiment settings shared by the CLI and the tests.

use nalgebra::{DVector, Vector3};

use crate::control::{InverseDynamicsGains, SlidingParams};
use crate::dynamics::{coefficient_basis, coefficient_count, ArmModel, Coefficient, DynamicParameters};
use crate::error::Result;
use crate::kinematics::{solve_position_ik, ArmKinematics, DampedPinvConfig, SegmentGeometry};
use crate::simulator::CircleTrajectory;

pub const STIFFNESS: [f64; 2] = [0.124, 0.083];
pub const DAMPING: [f64; 2] = [0.011, 0.009];
pub const SEGMENT_MASSES: [f64; 2] = [0.03, 0.025];
pub const SEGMENT_LENGTH: f64 = 0.15;
pub const CHAMBER_OFFSET: f64 = 0.012;
pub const CHAMBER_AREA: f64 = 3e-4;
pub const GRAVITY: f64 = 9.81;
/// Chamber pressure ceiling (Pa).
pub const P_MAX: f64 = 40e3;
/// Tip payloads of the robustness experiment (kg).
pub const PAYLOADS: [f64; 3] = [0.0, 0.011, 0.025];

pub const CIRCLE_RADIUS: f64 = 0.12;
pub const CIRCLE_OMEGA: f64 = 0.785;
pub const CIRCLE_HEIGHT: f64 = 0.26;

/// Controller rate of the closed-loop presets (Hz). The lightly loaded
/// bending-plane axes leave `K_D dt / M` well below 2 only at kHz rates.
pub const CLOSED_LOOP_RATE: f64 = 10_000.0;

pub fn geometry() -> Vec<SegmentGeometry> {
    (0..2)
        .map(|_| SegmentGeometry::new(SEGMENT_LENGTH, CHAMBER_OFFSET, CHAMBER_AREA).expect("valid preset geometry"))
        .collect()
}

pub fn parameters() -> DynamicParameters {
    DynamicParameters {
        masses: SEGMENT_MASSES.to_vec(),
        stiffness: STIFFNESS.to_vec(),
        damping: DAMPING.to_vec(),
        gravity: GRAVITY,
        tip_payload_mass: 0.0,
    }
}

/// Two-segment arm without payload.
pub fn arm() -> ArmModel {
    ArmModel::new(geometry(), parameters()).expect("valid preset arm")
}

pub fn arm_with_payload(mass: f64) -> Result<ArmModel> {
    let mut p = parameters();
    p.tip_payload_mass = mass;
    ArmModel::new(geometry(), p)
}

pub fn circle() -> CircleTrajectory {
    CircleTrajectory::new(Vector3::new(0.0, 0.0, CIRCLE_HEIGHT), CIRCLE_RADIUS, CIRCLE_OMEGA).expect("valid preset circle")
}

/// Jacobian inversion for task-space tracking with this arm. Tip Jacobian
/// singular values are a few centimetres per radian here, so damping is
/// set to engage only within about 0.1 rad of the straight pose.
pub fn task_pinv() -> DampedPinvConfig {
    DampedPinvConfig {
        epsilon: 0.005,
        lambda_max: 0.01,
    }
}

/// Adaptation gains per coefficient `(m_1, m_2, k_s1, k_s2, k_d1, k_d2, m_tip)`.
pub fn adaptation_gains() -> Vec<f64> {
    adaptation_gains_for(2)
}

pub fn adaptation_gains_for(segments: usize) -> Vec<f64> {
    coefficient_basis(segments)
        .into_iter()
        .map(|c| match c {
            Coefficient::Mass(_) => 0.01,
            Coefficient::Stiffness(_) => 0.05,
            Coefficient::Damping(_) => 0.005,
            Coefficient::TipMass => 0.5,
        })
        .collect()
}

/// Feedback gain on `s`: 0.03 on the curvature axes, a tenth of that on
/// the bending-plane axes, whose inertia is of order 1e-6 kg m^2 here.
pub fn feedback_gains() -> Vec<f64> {
    feedback_gains_for(2)
}

pub fn feedback_gains_for(segments: usize) -> Vec<f64> {
    (0..2 * segments).map(|i| if i % 2 == 0 { 0.003 } else { 0.03 }).collect()
}

/// Boundary layer per coordinate (rad/s).
pub fn boundary_layers() -> Vec<f64> {
    vec![0.05; 4]
}

/// Preset sliding parameters for `segments` segments tracking `tracked`
/// coordinates (3 in task space, `2 * segments` in curvature space).
pub fn sliding_params_for(segments: usize, tracked: usize) -> SlidingParams {
    let dof = 2 * segments;
    let mut p = SlidingParams::with_defaults(tracked, dof, adaptation_gains_for(segments), 1e-3, 0.05);
    p.k_d = feedback_gains_for(segments);
    p
}

pub fn task_sliding_params() -> SlidingParams {
    sliding_params_for(2, 3)
}

pub fn curvature_sliding_params() -> SlidingParams {
    sliding_params_for(2, 4)
}

/// Critically damped task-space benchmark gains.
pub fn invdyn_task_gains() -> InverseDynamicsGains {
    InverseDynamicsGains::critically_damped(20.0, 3, 10.0)
}

/// Configuration on the circle start point, reached by IK from a bend
/// towards `+x`, with a velocity matching the circle's.
pub fn circle_initial_state(geom: &[SegmentGeometry], circle: &CircleTrajectory) -> Result<(DVector<f64>, DVector<f64>)> {
    let c = Vector3::from(circle.center);
    let start = c + Vector3::new(circle.radius, 0.0, 0.0);
    let guess = DVector::from_fn(2 * geom.len(), |i, _| if i % 2 == 0 { std::f64::consts::PI } else { 0.4 });
    let ik = DampedPinvConfig {
        epsilon: 1e-3,
        lambda_max: 1e-2,
    };
    let q = solve_position_ik(geom, &start, &guess, &ik, 1e-12, 500)?;
    let kin = ArmKinematics::compute(geom, &q)?;
    let xdot = DVector::from_vec(vec![0.0, circle.radius * circle.omega, 0.0]);
    let qdot = crate::kinematics::damped_pinv(&kin.tip_jacobian, &ik) * xdot;
    Ok((q, qdot))
}

/// Coefficient count of the preset arm.
pub fn coefficients() -> usize {
    coefficient_count(2)
}
