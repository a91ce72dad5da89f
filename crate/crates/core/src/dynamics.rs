//! Euler-Lagrange dynamics of a PCC arm with lumped chord-midpoint masses.
//!
//! The arm is treated as `n + 1` point masses: one per segment at the
//! midpoint of its chord, plus an optional payload at the tip. Every mass
//! term is then `sum_b m_b * (unit-mass term of body b)`, which gives both
//! the full dynamics and the linear-in-coefficients regressor from the same
//! per-body pieces.
//!
//! Equation of motion:
//! `M(q) qdd + C(q, qd) qd + D(q) qd + g(q) + k(q) = A(q) p + d`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ArmKinematics, SegmentGeometry};

/// Condition number of the (regularized) inertia above which forward
/// dynamics refuses to solve.
pub const MAX_INERTIA_CONDITION: f64 = 1e12;

const INERTIA_REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicParameters {
    /// Per-segment mass (kg).
    pub masses: Vec<f64>,
    /// Per-segment bending stiffness `k_s` (N m).
    pub stiffness: Vec<f64>,
    /// Per-segment damping `k_d` (N m s).
    pub damping: Vec<f64>,
    /// Gravitational acceleration along `-z` (m/s^2).
    pub gravity: f64,
    /// Point mass carried at the end effector (kg).
    #[serde(default)]
    pub tip_payload_mass: f64,
}

impl DynamicParameters {
    pub fn segment_count(&self) -> usize {
        self.masses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 || self.stiffness.len() != n || self.damping.len() != n {
            return Err(Error::invalid(format!(
                "parameter lists must be non-empty and equal length (masses {}, stiffness {}, damping {})",
                n,
                self.stiffness.len(),
                self.damping.len()
            )));
        }
        let bad = |v: &f64| !v.is_finite();
        if self.masses.iter().chain(&self.stiffness).chain(&self.damping).any(bad) || bad(&self.gravity) || bad(&self.tip_payload_mass) {
            return Err(Error::invalid("dynamic parameters must be finite"));
        }
        if let Some(m) = self.masses.iter().find(|&&m| m <= 0.0) {
            return Err(Error::invalid(format!("segment mass must be > 0, got {m}")));
        }
        if self.stiffness.iter().chain(&self.damping).any(|&v| v < 0.0) {
            return Err(Error::invalid("stiffness and damping must be >= 0"));
        }
        if self.gravity < 0.0 || self.tip_payload_mass < 0.0 {
            return Err(Error::invalid("gravity and tip payload must be >= 0"));
        }
        Ok(())
    }

    fn body_mass(&self, b: usize) -> f64 {
        if b < self.masses.len() {
            self.masses[b]
        } else {
            self.tip_payload_mass
        }
    }
}

/// Geometry plus dynamic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub geometry: Vec<SegmentGeometry>,
    pub params: DynamicParameters,
}

impl ArmModel {
    pub fn new(geometry: Vec<SegmentGeometry>, params: DynamicParameters) -> Result<Self> {
        for g in &geometry {
            g.validate()?;
        }
        params.validate()?;
        if geometry.len() != params.segment_count() {
            return Err(Error::invalid(format!(
                "{} segment geometries but {} parameter sets",
                geometry.len(),
                params.segment_count()
            )));
        }
        Ok(Self { geometry, params })
    }

    pub fn segment_count(&self) -> usize {
        self.geometry.len()
    }

    pub fn dof(&self) -> usize {
        2 * self.geometry.len()
    }

    pub fn chamber_count(&self) -> usize {
        self.geometry.iter().map(|g| g.chamber_count).sum()
    }

    /// Same model with the coefficients replaced; gravity is kept.
    pub fn with_coefficients(&self, a: &CoefficientVector) -> Result<Self> {
        let params = a.to_parameters(self.params.gravity)?;
        Ok(Self {
            geometry: self.geometry.clone(),
            params,
        })
    }
}

/// What one entry of the coefficient vector stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Mass(usize),
    Stiffness(usize),
    Damping(usize),
    TipMass,
}

impl std::fmt::Display for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Mass(i) => write!(f, "m_{}", i + 1),
            Coefficient::Stiffness(i) => write!(f, "k_s{}", i + 1),
            Coefficient::Damping(i) => write!(f, "k_d{}", i + 1),
            Coefficient::TipMass => write!(f, "m_tip"),
        }
    }
}

/// Ordered basis `(m_1..m_n, k_s1..k_sn, k_d1..k_dn, m_tip)`, `r = 3n + 1`.
pub fn coefficient_basis(n: usize) -> Vec<Coefficient> {
    (0..n)
        .map(Coefficient::Mass)
        .chain((0..n).map(Coefficient::Stiffness))
        .chain((0..n).map(Coefficient::Damping))
        .chain(std::iter::once(Coefficient::TipMass))
        .collect()
}

pub fn coefficient_count(n: usize) -> usize {
    3 * n + 1
}

/// Coefficient vector over [`coefficient_basis`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub values: DVector<f64>,
    segments: usize,
}

impl CoefficientVector {
    pub fn new(segments: usize, values: DVector<f64>) -> Result<Self> {
        if values.len() != coefficient_count(segments) {
            return Err(Error::invalid(format!(
                "coefficient vector has {} entries, expected {}",
                values.len(),
                coefficient_count(segments)
            )));
        }
        Ok(Self { values, segments })
    }

    pub fn from_parameters(p: &DynamicParameters) -> Self {
        let values = p
            .masses
            .iter()
            .chain(&p.stiffness)
            .chain(&p.damping)
            .chain(std::iter::once(&p.tip_payload_mass))
            .copied();
        Self {
            values: DVector::from_iterator(coefficient_count(p.segment_count()), values),
            segments: p.segment_count(),
        }
    }

    /// Reassembles parameters. Unlike [`DynamicParameters::validate`] this
    /// accepts any finite values, since estimates may wander.
    pub fn to_parameters(&self, gravity: f64) -> Result<DynamicParameters> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        let n = self.segments;
        let v = self.values.as_slice();
        Ok(DynamicParameters {
            masses: v[..n].to_vec(),
            stiffness: v[n..2 * n].to_vec(),
            damping: v[2 * n..3 * n].to_vec(),
            gravity,
            tip_payload_mass: v[3 * n],
        })
    }

    pub fn segment_count(&self) -> usize {
        self.segments
    }

    pub fn basis(&self) -> Vec<Coefficient> {
        coefficient_basis(self.segments)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The left-hand side terms at one state. Immutable once computed.
#[derive(Debug, Clone)]
pub struct DynamicTerms {
    pub inertia: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub gravity: DVector<f64>,
    pub elastic: DVector<f64>,
}

impl DynamicTerms {
    /// `M qdd + C qd + D qd + g + k`.
    pub fn left_side(&self, qdot: &DVector<f64>, qddot: &DVector<f64>) -> DVector<f64> {
        &self.inertia * qddot + &self.coriolis * qdot + &self.damping * qdot + &self.gravity + &self.elastic
    }
}

/// Per-body unit-mass inertia and gravity terms at one configuration.
/// Bodies are the segment CoMs followed by the tip.
struct BodyTerms {
    inertia: Vec<DMatrix<f64>>,
    gravity: Vec<DVector<f64>>,
}

impl BodyTerms {
    fn compute(geom: &[SegmentGeometry], gravity: f64, q: &DVector<f64>) -> Result<Self> {
        let kin = ArmKinematics::compute(geom, q)?;
        let inertia = unit_inertias(&kin);
        // -J^T g0 with g0 = (0, 0, -g)
        let gravity_terms = body_jacobians(&kin).map(|j| j.row(2).transpose() * gravity).collect();
        Ok(Self {
            inertia,
            gravity: gravity_terms,
        })
    }

    fn body_count(&self) -> usize {
        self.inertia.len()
    }
}

fn body_jacobians(kin: &ArmKinematics) -> impl Iterator<Item = &DMatrix<f64>> {
    kin.com_jacobians.iter().chain(std::iter::once(&kin.tip_jacobian))
}

fn unit_inertias(kin: &ArmKinematics) -> Vec<DMatrix<f64>> {
    body_jacobians(kin).map(|j| j.tr_mul(j)).collect()
}

/// `d(M_b)/dq_k` for every body, indexed `[k][b]`, by central differences
/// of the analytic unit inertias.
fn unit_inertia_derivatives(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let dof = q.len();
    let mut out = Vec::with_capacity(dof);
    let mut probe = q.clone();
    for k in 0..dof {
        let h = 1e-6 * (1.0 + q[k].abs());
        probe[k] = q[k] + h;
        let plus = unit_inertias(&ArmKinematics::compute(geom, &probe)?);
        probe[k] = q[k] - h;
        let minus = unit_inertias(&ArmKinematics::compute(geom, &probe)?);
        probe[k] = q[k];
        let inv = 1.0 / (2.0 * h);
        out.push(plus.into_iter().zip(minus).map(|(p, m)| (p - m) * inv).collect());
    }
    Ok(out)
}

/// Christoffel-symbol Coriolis matrix from the partials `dm[k] = dM/dq_k`:
/// `C_ij = 1/2 sum_k (dM_ij/dq_k + dM_ik/dq_j - dM_kj/dq_i) qd_k`.
fn christoffel<'a, I>(dm: I, qdot: &DVector<f64>) -> DMatrix<f64>
where
    I: Iterator<Item = &'a DMatrix<f64>>,
{
    let dof = qdot.len();
    let mut mdot = DMatrix::zeros(dof, dof);
    // b[:, j] = dM/dq_j * qd, so b_ij = sum_k dM_ik/dq_j qd_k
    let mut b = DMatrix::zeros(dof, dof);
    for (k, dmk) in dm.enumerate() {
        mdot += dmk * qdot[k];
        b.set_column(k, &(dmk * qdot));
    }
    (mdot + &b - b.transpose()) * 0.5
}

fn weighted_sum(mats: &[DMatrix<f64>], params: &DynamicParameters) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(mats[0].nrows(), mats[0].ncols());
    for (b, m) in mats.iter().enumerate() {
        acc += m * params.body_mass(b);
    }
    acc
}

fn check_state(model: &ArmModel, v: &DVector<f64>, what: &str) -> Result<()> {
    if v.len() != model.dof() {
        return Err(Error::invalid(format!("{what} has {} entries, expected {}", v.len(), model.dof())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

/// `M = sum_i m_i J_ci^T J_ci + m_tip J_tip^T J_tip` (translational energy
/// only).
pub fn inertia_matrix(model: &ArmModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let kin = ArmKinematics::compute(&model.geometry, q)?;
    Ok(weighted_sum(&unit_inertias(&kin), &model.params))
}

pub fn coriolis_matrix(model: &ArmModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_state(model, qdot, "velocity")?;
    let dm = mass_weighted_derivatives(model, q)?;
    Ok(christoffel(dm.iter(), qdot))
}

fn mass_weighted_derivatives(model: &ArmModel, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
    Ok(unit_inertia_derivatives(&model.geometry, q)?
        .iter()
        .map(|per_body| weighted_sum(per_body, &model.params))
        .collect())
}

/// Gravity and elastic generalized forces `(g, k)`, the gradients of the
/// gravitational and elastic potentials.
pub fn gravity_elastic(model: &ArmModel, q: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let bodies = BodyTerms::compute(&model.geometry, model.params.gravity, q)?;
    Ok((gravity_from(&bodies, &model.params), elastic_force(model, q)))
}

fn gravity_from(bodies: &BodyTerms, params: &DynamicParameters) -> DVector<f64> {
    let mut g = DVector::zeros(bodies.gravity[0].len());
    for (b, gb) in bodies.gravity.iter().enumerate() {
        g += gb * params.body_mass(b);
    }
    g
}

fn elastic_force(model: &ArmModel, q: &DVector<f64>) -> DVector<f64> {
    let mut k = DVector::zeros(model.dof());
    for (i, ks) in model.params.stiffness.iter().enumerate() {
        k[2 * i + 1] = ks * q[2 * i + 1];
    }
    k
}

/// Block diagonal of `k_d,i * diag(theta_i^2, 1)`.
pub fn damping_matrix(model: &ArmModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_state(model, q, "configuration")?;
    let mut d = DMatrix::zeros(model.dof(), model.dof());
    for (i, kd) in model.params.damping.iter().enumerate() {
        let theta = q[2 * i + 1];
        d[(2 * i, 2 * i)] = kd * theta * theta;
        d[(2 * i + 1, 2 * i + 1)] = *kd;
    }
    Ok(d)
}

/// Chamber pressures to generalized forces.
///
/// Chamber `j` of a segment sits at angle `psi_j = 2 pi j / c` at radius
/// `d` and has length `L + d theta cos(psi_j - phi)`; virtual work gives a
/// `theta` force `a d p_j cos(psi_j - phi)` and a `phi` force
/// `a d theta p_j sin(psi_j - phi)`. Block diagonal over segments.
pub fn actuator_map(geom: &[SegmentGeometry], q: &DVector<f64>) -> Result<DMatrix<f64>> {
    if q.len() != 2 * geom.len() {
        return Err(Error::invalid("configuration does not match geometry"));
    }
    let chambers: usize = geom.iter().map(|g| g.chamber_count).sum();
    let mut a = DMatrix::zeros(q.len(), chambers);
    let mut col = 0;
    for (i, g) in geom.iter().enumerate() {
        let (phi, theta) = (q[2 * i], q[2 * i + 1]);
        let arm = g.chamber_area * g.chamber_offset;
        for j in 0..g.chamber_count {
            let psi = TAU * j as f64 / g.chamber_count as f64;
            let (s, c) = (psi - phi).sin_cos();
            a[(2 * i, col)] = arm * theta * s;
            a[(2 * i + 1, col)] = arm * c;
            col += 1;
        }
    }
    Ok(a)
}

/// All left-hand-side terms at `(q, qdot)`.
pub fn dynamic_terms(model: &ArmModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DynamicTerms> {
    check_state(model, qdot, "velocity")?;
    let bodies = BodyTerms::compute(&model.geometry, model.params.gravity, q)?;
    let dm = mass_weighted_derivatives(model, q)?;
    Ok(DynamicTerms {
        inertia: weighted_sum(&bodies.inertia, &model.params),
        coriolis: christoffel(dm.iter(), qdot),
        damping: damping_matrix(model, q)?,
        gravity: gravity_from(&bodies, &model.params),
        elastic: elastic_force(model, q),
    })
}

/// Solves `M x = rhs` with a small diagonal regularization, refusing when
/// the regularized inertia is too ill-conditioned.
pub fn solve_inertia(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let dof = m.nrows();
    let mu = INERTIA_REGULARIZATION * m.trace() / dof as f64;
    let mut reg = m.clone();
    for i in 0..dof {
        reg[(i, i)] += mu;
    }
    let eig = SymmetricEigen::new(reg.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_INERTIA_CONDITION) {
        return Err(Error::SingularConfiguration { condition });
    }
    let chol = reg.cholesky().ok_or(Error::SingularConfiguration { condition })?;
    // One refinement step against the unregularized inertia.
    let x = chol.solve(rhs);
    let r = rhs - m * &x;
    Ok(x + chol.solve(&r))
}

/// `qdd = M^-1 (A p + d - C qd - D qd - g - k)`.
pub fn forward_dynamics(
    model: &ArmModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    pressures: &DVector<f64>,
    disturbance: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_state(model, disturbance, "disturbance")?;
    if pressures.len() != model.chamber_count() {
        return Err(Error::invalid(format!(
            "{} pressures for {} chambers",
            pressures.len(),
            model.chamber_count()
        )));
    }
    let terms = dynamic_terms(model, q, qdot)?;
    let a = actuator_map(&model.geometry, q)?;
    let rhs = a * pressures + disturbance - &terms.coriolis * qdot - &terms.damping * qdot - &terms.gravity - &terms.elastic;
    solve_inertia(&terms.inertia, &rhs)
}

pub fn kinetic_energy(model: &ArmModel, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<f64> {
    check_state(model, qdot, "velocity")?;
    let m = inertia_matrix(model, q)?;
    Ok(0.5 * qdot.dot(&(m * qdot)))
}

/// Elastic plus gravitational potential, zero at the straight pose with the
/// base at height zero.
pub fn potential_energy(model: &ArmModel, q: &DVector<f64>) -> Result<f64> {
    let kin = ArmKinematics::compute(&model.geometry, q)?;
    let p = &model.params;
    let elastic: f64 = p
        .stiffness
        .iter()
        .enumerate()
        .map(|(i, ks)| 0.5 * ks * q[2 * i + 1] * q[2 * i + 1])
        .sum();
    let heights = kin.com.iter().map(|c| c.z).chain(std::iter::once(kin.tip.z));
    let gravitational: f64 = heights.enumerate().map(|(b, z)| p.body_mass(b) * p.gravity * z).sum();
    Ok(elastic + gravitational)
}

/// Regressor `Y(q, qd, qd_r, qdd_r)` with
/// `Y a = M qdd_r + C(q, qd) qd_r + D qd + g + k` over
/// [`coefficient_basis`]. The damping column multiplies the measured `qd`,
/// not the reference velocity.
pub fn regressor(
    geom: &[SegmentGeometry],
    gravity: f64,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qdot_r: &DVector<f64>,
    qddot_r: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = geom.len();
    let dof = 2 * n;
    for (v, what) in [
        (qdot, "velocity"),
        (qdot_r, "reference velocity"),
        (qddot_r, "reference acceleration"),
    ] {
        if v.len() != dof || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{what} must be {dof} finite entries")));
        }
    }
    let bodies = BodyTerms::compute(geom, gravity, q)?;
    let dm = unit_inertia_derivatives(geom, q)?;
    let mut y = DMatrix::zeros(dof, coefficient_count(n));

    // Mass columns: segments first, then the tip payload in the last column.
    for b in 0..bodies.body_count() {
        let coriolis = christoffel(dm.iter().map(|per_body| &per_body[b]), qdot);
        let col = &bodies.inertia[b] * qddot_r + coriolis * qdot_r + &bodies.gravity[b];
        let index = if b < n { b } else { 3 * n };
        y.set_column(index, &col);
    }
    for i in 0..n {
        let theta = q[2 * i + 1];
        y[(2 * i + 1, n + i)] = theta;
        y[(2 * i, 2 * n + i)] = theta * theta * qdot[2 * i];
        y[(2 * i + 1, 2 * n + i)] = qdot[2 * i + 1];
    }
    Ok(y)
}
