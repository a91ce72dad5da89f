//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softarm::kinematics::SegmentGeometry;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

pub fn geometry(lengths: &[f64]) -> Vec<SegmentGeometry> {
    lengths.iter().map(|&l| SegmentGeometry::new(l, 0.012, 3e-4).unwrap()).collect()
}

/// Random configuration with every bend in `[lo, hi]` in magnitude, random sign.
pub fn random_q(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(2 * n, |i, _| {
        if i % 2 == 0 {
            uniform(r, -std::f64::consts::PI, std::f64::consts::PI)
        } else {
            let m = uniform(r, lo, hi);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        }
    })
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(r, -scale, scale))
}

/// Entry-by-entry constant-curvature rotation and translation.
pub fn oracle_transform(phi: f64, theta: f64, length: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let (sp, cp) = (phi.sin(), phi.cos());
    let (st, ct) = (theta.sin(), theta.cos());
    let r = Matrix3::new(
        cp * cp * (ct - 1.0) + 1.0,
        sp * cp * (ct - 1.0),
        -cp * st,
        sp * cp * (ct - 1.0),
        cp * cp * (1.0 - ct) + ct,
        -sp * st,
        cp * st,
        sp * st,
        ct,
    );
    let rho = length / theta;
    let t = Vector3::new(rho * cp * (ct - 1.0), rho * sp * (ct - 1.0), rho * st);
    (r, t)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = (a.sin(), a.cos());
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about y in the handedness under which the transform above is
/// `Rz(phi) Ry(theta) Rz(-phi)`.
fn rot_y_bend(a: f64) -> Matrix3<f64> {
    let (s, c) = (a.sin(), a.cos());
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Chord-midpoint center of mass in the segment base frame.
pub fn oracle_com_local(phi: f64, theta: f64, length: f64) -> Vector3<f64> {
    let rho = length / theta;
    rot_z(phi) * rot_y_bend(theta / 2.0) * Vector3::new(0.0, 0.0, rho * (theta / 2.0).sin())
}

/// Sanity link between the two transcriptions.
pub fn oracle_rotation_by_composition(phi: f64, theta: f64) -> Matrix3<f64> {
    rot_z(phi) * rot_y_bend(theta) * rot_z(-phi)
}

/// Frames, CoMs and tip by chaining the oracle transforms.
pub struct OracleChain {
    pub frames: Vec<(Matrix3<f64>, Vector3<f64>)>,
    pub com: Vec<Vector3<f64>>,
    pub tip: Vector3<f64>,
}

pub fn oracle_chain(lengths: &[f64], q: &DVector<f64>) -> OracleChain {
    let mut r = Matrix3::identity();
    let mut p = Vector3::zeros();
    let mut frames = Vec::new();
    let mut com = Vec::new();
    for (i, &l) in lengths.iter().enumerate() {
        let (phi, theta) = (q[2 * i], q[2 * i + 1]);
        com.push(p + r * oracle_com_local(phi, theta, l));
        let (ri, ti) = oracle_transform(phi, theta, l);
        p += r * ti;
        r *= ri;
        frames.push((r, p));
    }
    OracleChain { frames, com, tip: p }
}

/// Central-difference Jacobian of a point map.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> Vector3<f64>, q: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3, q.len());
    for k in 0..q.len() {
        let mut a = q.clone();
        let mut b = q.clone();
        a[k] += h;
        b[k] -= h;
        let d = (f(&a) - f(&b)) / (2.0 * h);
        j.set_column(k, &DVector::from_column_slice(d.as_slice()));
    }
    j
}

/// Matrix with prescribed singular values and random orthonormal factors.
pub fn with_singular_values(r: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: &[f64]) -> DMatrix<f64> {
    let u = random_vec(r, rows * rows, 1.0);
    let v = random_vec(r, cols * cols, 1.0);
    let u = DMatrix::from_column_slice(rows, rows, u.as_slice()).qr().q();
    let v = DMatrix::from_column_slice(cols, cols, v.as_slice()).qr().q();
    let mut s = DMatrix::zeros(rows, cols);
    for (i, &x) in sigma.iter().enumerate() {
        s[(i, i)] = x;
    }
    u * s * v.transpose()
}
