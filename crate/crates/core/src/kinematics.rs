//! Piecewise-constant-curvature kinematics.
//!
//! Each segment is a circular arc of fixed length `L` parameterized by the
//! bending-plane angle `phi` (measured from the base x-z plane) and the total
//! bending angle `theta`. Generalized coordinates are stacked per segment as
//! `q = (phi_1, theta_1, ..., phi_n, theta_n)`.
//!
//! With `theta > 0` and `phi = 0` the arc bends towards `-x`; the tip frame is
//! `Rz(phi) * Ry(-theta) * Rz(-phi)` and the tip position is
//! `(L/theta) * (cos(phi)(cos(theta)-1), sin(phi)(cos(theta)-1), sin(theta))`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|theta|` the `L/theta` terms switch to their Taylor series.
pub const THETA_SERIES_THRESHOLD: f64 = 1e-4;

// The derivative expressions cancel more aggressively than the values, so
// they switch to series earlier.
const DERIVATIVE_SERIES_THRESHOLD: f64 = 1e-2;

/// Default physical bend limit on `|theta|`.
pub const DEFAULT_BEND_LIMIT: f64 = TAU;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub phi: f64,
    pub theta: f64,
}

impl SegmentConfig {
    pub fn new(phi: f64, theta: f64) -> Result<Self> {
        Self::with_bend_limit(phi, theta, DEFAULT_BEND_LIMIT)
    }

    pub fn with_bend_limit(phi: f64, theta: f64, limit: f64) -> Result<Self> {
        if !phi.is_finite() || !theta.is_finite() {
            return Err(Error::invalid(format!(
                "segment angles must be finite (phi = {phi}, theta = {theta})"
            )));
        }
        if theta.abs() >= limit {
            return Err(Error::invalid(format!("|theta| = {} exceeds bend limit {limit}", theta.abs())));
        }
        Ok(Self {
            phi: wrap_angle(phi),
            theta,
        })
    }

    /// Curvature radius `L / theta`; infinite for a straight segment.
    pub fn radius(&self, length: f64) -> f64 {
        length / self.theta
    }
}

/// Generalized coordinates of the whole arm, stored flat as `q` in `R^{2n}`.
///
/// The flat vector is kept exactly as given (no wrapping of `phi`) so that
/// integrated trajectories stay continuous; [`ArmConfiguration::segments`]
/// returns the wrapped per-segment view.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmConfiguration(DVector<f64>);

impl ArmConfiguration {
    pub fn from_segments(segments: &[SegmentConfig]) -> Self {
        let flat = segments.iter().flat_map(|s| [s.phi, s.theta]);
        Self(DVector::from_iterator(segments.len() * 2, flat))
    }

    pub fn from_vector(q: DVector<f64>) -> Result<Self> {
        if q.len() % 2 != 0 || q.is_empty() {
            return Err(Error::invalid(format!(
                "configuration length {} is not a positive multiple of 2",
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("configuration contains non-finite entries"));
        }
        Ok(Self(q))
    }

    pub fn segment_count(&self) -> usize {
        self.0.len() / 2
    }

    pub fn segment(&self, i: usize) -> SegmentConfig {
        SegmentConfig {
            phi: wrap_angle(self.0[2 * i]),
            theta: self.0[2 * i + 1],
        }
    }

    pub fn segments(&self) -> Vec<SegmentConfig> {
        (0..self.segment_count()).map(|i| self.segment(i)).collect()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// Fixed geometry of one segment, including the pneumatic chamber layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentGeometry {
    /// Arc length (m).
    pub length: f64,
    /// Radial distance of each chamber centroid from the backbone (m).
    pub chamber_offset: f64,
    /// Effective piston area of one chamber (m^2).
    pub chamber_area: f64,
    pub chamber_count: usize,
}

impl SegmentGeometry {
    pub fn new(length: f64, chamber_offset: f64, chamber_area: f64) -> Result<Self> {
        let g = Self {
            length,
            chamber_offset,
            chamber_area,
            chamber_count: 3,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.length) {
            return Err(Error::invalid(format!("segment length must be > 0, got {}", self.length)));
        }
        if !positive(self.chamber_offset) {
            return Err(Error::invalid(format!("chamber offset must be > 0, got {}", self.chamber_offset)));
        }
        if !positive(self.chamber_area) {
            return Err(Error::invalid(format!("chamber area must be > 0, got {}", self.chamber_area)));
        }
        if self.chamber_count < 3 {
            return Err(Error::invalid(format!(
                "at least 3 chambers per segment required, got {}",
                self.chamber_count
            )));
        }
        Ok(())
    }
}

/// Rigid transform with an explicit rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// `self * other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Inverse mapping of [`Pose::transform_point`].
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// `sin(x) / x`, continuous through zero.
fn sinc(x: f64) -> f64 {
    if x.abs() < THETA_SERIES_THRESHOLD {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(cos(theta) - 1) / theta` and `sin(theta) / theta`.
fn chord_terms(theta: f64) -> (f64, f64) {
    let half_sinc = sinc(0.5 * theta);
    (-0.5 * theta * half_sinc * half_sinc, sinc(theta))
}

/// Derivatives of [`chord_terms`] with respect to `theta`.
fn chord_term_derivatives(theta: f64) -> (f64, f64) {
    if theta.abs() < DERIVATIVE_SERIES_THRESHOLD {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let d1 = -0.5 + t2 / 8.0 - t4 / 144.0 + t4 * t2 / 5760.0;
        let d2 = theta * (-1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t4 * t2 / 45360.0);
        (d1, d2)
    } else {
        let (s, c) = theta.sin_cos();
        let h = (0.5 * theta).sin();
        let t2 = theta * theta;
        ((2.0 * h * h - theta * s) / t2, (theta * c - s) / t2)
    }
}

fn check_finite(cfg: &SegmentConfig, length: f64) -> Result<()> {
    if !cfg.phi.is_finite() || !cfg.theta.is_finite() || !length.is_finite() {
        return Err(Error::invalid("non-finite segment input"));
    }
    if length <= 0.0 {
        return Err(Error::invalid(format!("segment length must be > 0, got {length}")));
    }
    Ok(())
}

fn rotation(phi: f64, theta: f64) -> Matrix3<f64> {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Matrix3::new(
        cp * cp * (ct - 1.0) + 1.0,
        sp * cp * (ct - 1.0),
        -cp * st,
        sp * cp * (ct - 1.0),
        cp * cp * (1.0 - ct) + ct,
        -sp * st,
        cp * st,
        sp * st,
        ct,
    )
}

/// Constant-curvature transform from the segment base to its tip.
pub fn segment_transform(cfg: SegmentConfig, length: f64) -> Result<Pose> {
    check_finite(&cfg, length)?;
    Ok(segment_pose(cfg.phi, cfg.theta, length))
}

fn segment_pose(phi: f64, theta: f64, length: f64) -> Pose {
    let (sp, cp) = phi.sin_cos();
    let (f1, f2) = chord_terms(theta);
    Pose {
        rotation: rotation(phi, theta),
        translation: length * Vector3::new(cp * f1, sp * f1, f2),
    }
}

/// Center of mass of a segment in its base frame.
///
/// The mass is lumped at the midpoint of the chord joining base and tip:
/// distance `rho * sin(theta/2)` along the base z-axis tilted by `theta/2`
/// in the bending plane.
pub fn segment_com_local(cfg: SegmentConfig, length: f64) -> Result<Vector3<f64>> {
    check_finite(&cfg, length)?;
    Ok(com_local(cfg.phi, cfg.theta, length))
}

fn com_local(phi: f64, theta: f64, length: f64) -> Vector3<f64> {
    let (sp, cp) = phi.sin_cos();
    let (sh, ch) = (0.5 * theta).sin_cos();
    // rho * sin(theta/2), finite at theta = 0
    let reach = 0.5 * length * sinc(0.5 * theta);
    reach * Vector3::new(-cp * sh, -sp * sh, ch)
}

/// Segment-local quantities with their partial derivatives; index 0 is
/// `phi`, index 1 is `theta`.
struct SegmentLocal {
    pose: Pose,
    d_rotation: [Matrix3<f64>; 2],
    d_translation: [Vector3<f64>; 2],
    com: Vector3<f64>,
}

impl SegmentLocal {
    fn new(phi: f64, theta: f64, length: f64) -> Self {
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (f1, _) = chord_terms(theta);
        let (df1, df2) = chord_term_derivatives(theta);
        let c2p = cp * cp - sp * sp;
        let spcp = sp * cp;
        let d_rot_phi = Matrix3::new(
            -2.0 * spcp * (ct - 1.0),
            c2p * (ct - 1.0),
            sp * st,
            c2p * (ct - 1.0),
            2.0 * spcp * (ct - 1.0),
            -cp * st,
            -sp * st,
            cp * st,
            0.0,
        );
        let d_rot_theta = Matrix3::new(
            -cp * cp * st,
            -spcp * st,
            -cp * ct,
            -spcp * st,
            cp * cp * st - st,
            -sp * ct,
            cp * ct,
            sp * ct,
            -st,
        );
        Self {
            pose: segment_pose(phi, theta, length),
            d_rotation: [d_rot_phi, d_rot_theta],
            d_translation: [
                length * Vector3::new(-sp * f1, cp * f1, 0.0),
                length * Vector3::new(cp * df1, sp * df1, df2),
            ],
            com: com_local(phi, theta, length),
        }
    }

    /// The chord midpoint is exactly half the tip translation.
    fn d_com(&self, k: usize) -> Vector3<f64> {
        0.5 * self.d_translation[k]
    }
}

fn check_dims(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<()> {
    if geom.is_empty() {
        return Err(Error::invalid("arm has no segments"));
    }
    if q.len() != 2 * geom.len() {
        return Err(Error::invalid(format!(
            "configuration has {} entries, expected {} for {} segments",
            q.len(),
            2 * geom.len(),
            geom.len()
        )));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("configuration contains non-finite entries"));
    }
    Ok(())
}

/// Everything position-level about the arm at one configuration, computed in
/// a single pass: cumulative frames, world CoMs and tip, and their
/// `3 x 2n` position Jacobians.
#[derive(Debug, Clone)]
pub struct ArmKinematics {
    /// Frames `{S_1}..{S_n}` expressed in the base frame `{S_0}`.
    pub frames: Vec<Pose>,
    pub com: Vec<Vector3<f64>>,
    pub tip: Vector3<f64>,
    pub com_jacobians: Vec<DMatrix<f64>>,
    pub tip_jacobian: DMatrix<f64>,
}

impl ArmKinematics {
    pub fn compute(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<Self> {
        check_dims(geom, q)?;
        let n = geom.len();
        let locals: Vec<SegmentLocal> = (0..n).map(|i| SegmentLocal::new(q[2 * i], q[2 * i + 1], geom[i].length)).collect();

        // prefix[k] = T_1 * ... * T_k, prefix[0] = identity
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(Pose::identity());
        for local in &locals {
            let next = prefix.last().unwrap().compose(&local.pose);
            prefix.push(next);
        }

        let com: Vec<Vector3<f64>> = (0..n).map(|i| prefix[i].transform_point(&locals[i].com)).collect();
        let tip = prefix[n].translation;

        // d/dq of a world point w that rides on the chain after segment s
        let chain_column = |s: usize, k: usize, w: &Vector3<f64>| -> Vector3<f64> {
            let y = prefix[s + 1].inverse_transform_point(w);
            prefix[s].rotation * (locals[s].d_rotation[k] * y + locals[s].d_translation[k])
        };

        let mut com_jacobians = Vec::with_capacity(n);
        for (i, w) in com.iter().enumerate() {
            let mut jac = DMatrix::zeros(3, 2 * n);
            for s in 0..i {
                for k in 0..2 {
                    jac.fixed_view_mut::<3, 1>(0, 2 * s + k).copy_from(&chain_column(s, k, w));
                }
            }
            for k in 0..2 {
                let col = prefix[i].rotation * locals[i].d_com(k);
                jac.fixed_view_mut::<3, 1>(0, 2 * i + k).copy_from(&col);
            }
            com_jacobians.push(jac);
        }

        let mut tip_jacobian = DMatrix::zeros(3, 2 * n);
        for s in 0..n {
            for k in 0..2 {
                tip_jacobian
                    .fixed_view_mut::<3, 1>(0, 2 * s + k)
                    .copy_from(&chain_column(s, k, &tip));
            }
        }

        Ok(Self {
            frames: prefix[1..].to_vec(),
            com,
            tip,
            com_jacobians,
            tip_jacobian,
        })
    }
}

/// Cumulative frames `{S_1}..{S_n}` in the base frame; the last translation
/// is the end-effector position.
pub fn forward_kinematics(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<Vec<Pose>> {
    check_dims(geom, q)?;
    let mut frames = Vec::with_capacity(geom.len());
    let mut acc = Pose::identity();
    for (i, g) in geom.iter().enumerate() {
        acc = acc.compose(&segment_pose(q[2 * i], q[2 * i + 1], g.length));
        frames.push(acc);
    }
    Ok(frames)
}

/// End-effector position.
pub fn tip_position(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<Vector3<f64>> {
    Ok(forward_kinematics(geom, q)?.last().unwrap().translation)
}

/// World CoM of segment `i` (1-based, matching frame numbering).
pub fn com_world(geom: &[SegmentGeometry], q: &DVector<f64>, i: usize) -> Result<Vector3<f64>> {
    check_dims(geom, q)?;
    if i == 0 || i > geom.len() {
        return Err(Error::invalid(format!("segment index {i} out of range 1..={}", geom.len())));
    }
    let mut base = Pose::identity();
    for (k, g) in geom.iter().take(i - 1).enumerate() {
        base = base.compose(&segment_pose(q[2 * k], q[2 * k + 1], g.length));
    }
    Ok(base.transform_point(&com_local(q[2 * i - 2], q[2 * i - 1], geom[i - 1].length)))
}

#[derive(Debug, Clone)]
pub struct PositionJacobians {
    pub tip: DMatrix<f64>,
    pub com: Vec<DMatrix<f64>>,
}

pub fn position_jacobians(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<PositionJacobians> {
    let kin = ArmKinematics::compute(geom, q)?;
    Ok(PositionJacobians {
        tip: kin.tip_jacobian,
        com: kin.com_jacobians,
    })
}

/// `dJ_tip/dt` along the velocity `qdot`, by a central difference of the
/// analytic Jacobian in the direction of `qdot`.
pub fn jacobian_time_derivative(geom: &[SegmentGeometry], q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dims(geom, q)?;
    if qdot.len() != q.len() {
        return Err(Error::invalid("velocity dimension mismatch"));
    }
    let speed = qdot.norm();
    if speed == 0.0 {
        return Ok(DMatrix::zeros(3, q.len()));
    }
    let h = 1e-6;
    let dir = qdot / speed;
    let forward = ArmKinematics::compute(geom, &(q + &dir * h))?.tip_jacobian;
    let backward = ArmKinematics::compute(geom, &(q - &dir * h))?.tip_jacobian;
    Ok((forward - backward) * (speed / (2.0 * h)))
}

/// Variable damping for the singularity-robust pseudo-inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampedPinvConfig {
    /// Damping engages when the smallest singular value drops below this.
    pub epsilon: f64,
    pub lambda_max: f64,
}

impl Default for DampedPinvConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            lambda_max: 0.1,
        }
    }
}

impl DampedPinvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.lambda_max > 0.0) {
            return Err(Error::invalid(format!(
                "damped pseudo-inverse needs epsilon > 0 and lambda_max > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Applied `lambda^2` for smallest singular value `sigma_min`.
    pub fn damping_sq(&self, sigma_min: f64) -> f64 {
        if sigma_min >= self.epsilon {
            0.0
        } else {
            let r = sigma_min / self.epsilon;
            (1.0 - r * r) * self.lambda_max * self.lambda_max
        }
    }
}

/// SVD-based damped pseudo-inverse: each singular value maps to
/// `sigma / (sigma^2 + lambda^2)`, with `lambda^2` ramped in quadratically as
/// the smallest singular value falls below `epsilon`.
pub fn damped_pinv(j: &DMatrix<f64>, cfg: &DampedPinvConfig) -> DMatrix<f64> {
    let (m, k) = j.shape();
    if m == 0 || k == 0 {
        return DMatrix::zeros(k, m);
    }
    let svd = SVD::new(j.clone(), true, true);
    let sigma = &svd.singular_values;
    let sigma_min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_sq = cfg.damping_sq(sigma_min);
    let inv = sigma.map(|s| if s == 0.0 { 0.0 } else { s / (s * s + lambda_sq) });
    let u = svd.u.as_ref().expect("SVD computed with U");
    let v_t = svd.v_t.as_ref().expect("SVD computed with V^T");
    v_t.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}

/// Damped least-squares position IK, used to place initial states on a
/// task-space reference.
pub fn solve_position_ik(
    geom: &[SegmentGeometry],
    target: &Vector3<f64>,
    initial: &DVector<f64>,
    cfg: &DampedPinvConfig,
    tolerance: f64,
    max_iters: usize,
) -> Result<DVector<f64>> {
    let mut q = initial.clone();
    for _ in 0..max_iters {
        let kin = ArmKinematics::compute(geom, &q)?;
        let err = target - kin.tip;
        if err.norm() < tolerance {
            return Ok(q);
        }
        let step = damped_pinv(&kin.tip_jacobian, cfg) * DVector::from_column_slice(err.as_slice());
        q += step;
    }
    Err(Error::invalid(format!(
        "position IK did not converge to {target:?} within {max_iters} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn geom(lengths: &[f64]) -> Vec<SegmentGeometry> {
        lengths.iter().map(|&l| SegmentGeometry::new(l, 0.01, 1e-4).unwrap()).collect()
    }

    fn assert_vec_close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) {
        assert!((a - b).amax() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn straight_segment_is_pure_translation() {
        let pose = segment_transform(SegmentConfig::new(1.3, 0.0).unwrap(), 0.1).unwrap();
        assert!((pose.rotation - Matrix3::identity()).amax() < 1e-15);
        assert_vec_close(&pose.translation, &Vector3::new(0.0, 0.0, 0.1), 1e-15);
    }

    #[test]
    fn half_turn_bends_towards_negative_x() {
        let pose = segment_transform(SegmentConfig::new(0.0, PI).unwrap(), 0.1).unwrap();
        assert_vec_close(&pose.translation, &Vector3::new(-0.2 / PI, 0.0, 0.0), 1e-15);
        let rot_y_pi = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!((pose.rotation - rot_y_pi).amax() < 1e-15);
    }

    #[test]
    fn quarter_turn_tip() {
        let q = DVector::from_vec(vec![0.0, FRAC_PI_2]);
        let tip = tip_position(&geom(&[0.1]), &q).unwrap();
        assert_vec_close(&tip, &Vector3::new(-0.2 / PI, 0.0, 0.2 / PI), 1e-15);
    }

    #[test]
    fn two_straight_segments_stack() {
        let q = DVector::zeros(4);
        let tip = tip_position(&geom(&[0.1, 0.1]), &q).unwrap();
        assert_vec_close(&tip, &Vector3::new(0.0, 0.0, 0.2), 1e-15);
        let c2 = com_world(&geom(&[0.1, 0.1]), &q, 2).unwrap();
        assert_vec_close(&c2, &Vector3::new(0.0, 0.0, 0.15), 1e-15);
        let c1 = com_world(&geom(&[0.1, 0.1]), &q, 1).unwrap();
        assert_vec_close(&c1, &Vector3::new(0.0, 0.0, 0.05), 1e-15);
    }

    #[test]
    fn com_examples() {
        let c = segment_com_local(SegmentConfig::new(0.4, 0.0).unwrap(), 0.1).unwrap();
        assert_vec_close(&c, &Vector3::new(0.0, 0.0, 0.05), 1e-15);
        let c = segment_com_local(SegmentConfig::new(0.0, PI).unwrap(), 0.1).unwrap();
        assert_vec_close(&c, &Vector3::new(-0.1 / PI, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn com_index_out_of_range() {
        let q = DVector::zeros(4);
        assert!(com_world(&geom(&[0.1, 0.1]), &q, 0).is_err());
        assert!(com_world(&geom(&[0.1, 0.1]), &q, 3).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(segment_transform(SegmentConfig { phi: f64::NAN, theta: 0.1 }, 0.1).is_err());
        assert!(segment_transform(SegmentConfig { phi: 0.0, theta: 0.1 }, 0.0).is_err());
        assert!(SegmentConfig::new(0.0, 7.0).is_err());
        let q = DVector::zeros(3);
        assert!(forward_kinematics(&geom(&[0.1, 0.1]), &q).is_err());
    }

    #[test]
    fn phi_is_wrapped() {
        let c = SegmentConfig::new(3.0 * PI, 0.2).unwrap();
        assert!((c.phi - PI).abs() < 1e-12);
        let c = SegmentConfig::new(-PI, 0.2).unwrap();
        assert_eq!(c.phi, PI);
    }

    #[test]
    fn configuration_round_trip() {
        let segs = vec![SegmentConfig::new(0.3, 0.5).unwrap(), SegmentConfig::new(-2.0, -0.1).unwrap()];
        let arm = ArmConfiguration::from_segments(&segs);
        assert_eq!(arm.segments(), segs);
        let v = arm.as_vector().clone();
        assert_eq!(ArmConfiguration::from_vector(v.clone()).unwrap().into_vector(), v);
        assert!(ArmConfiguration::from_vector(DVector::zeros(3)).is_err());
    }

    #[test]
    fn zero_velocity_gives_zero_jdot() {
        let q = DVector::from_vec(vec![0.2, 0.4, -0.3, 0.6]);
        let jd = jacobian_time_derivative(&geom(&[0.1, 0.12]), &q, &DVector::zeros(4)).unwrap();
        assert_eq!(jd.amax(), 0.0);
    }

    #[test]
    fn damped_pinv_examples() {
        let cfg = DampedPinvConfig {
            epsilon: 0.01,
            lambda_max: 0.1,
        };
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((damped_pinv(&eye, &cfg) - &eye).amax() < 1e-15);
        assert_eq!(damped_pinv(&DMatrix::zeros(3, 4), &cfg).amax(), 0.0);

        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.005]));
        let p = damped_pinv(&j, &cfg);
        let lambda_sq = (1.0 - 0.25) * 0.01;
        assert!((cfg.damping_sq(0.005) - lambda_sq).abs() < 1e-15);
        assert!((p[(1, 1)] - 0.005 / (0.005 * 0.005 + lambda_sq)).abs() < 1e-12);
        assert!((p[(1, 1)] - 0.66445).abs() < 1e-5);
        assert!((p[(0, 0)] - 1.0 / (1.0 + lambda_sq)).abs() < 1e-12);
    }

    #[test]
    fn ik_reaches_target() {
        let g = geom(&[0.15, 0.15]);
        let target_q = DVector::from_vec(vec![0.4, 0.5, 1.0, 0.3]);
        let target = tip_position(&g, &target_q).unwrap();
        let q0 = DVector::from_vec(vec![0.0, 0.2, 0.0, 0.2]);
        let cfg = DampedPinvConfig {
            epsilon: 1e-3,
            lambda_max: 1e-2,
        };
        let q = solve_position_ik(&g, &target, &q0, &cfg, 1e-10, 200).unwrap();
        assert!((tip_position(&g, &q).unwrap() - target).norm() < 1e-10);
    }
}
