//! Offline identification of dynamic coefficients from logged motion.
//!
//! Each sample satisfies `Y(q, qd, qdd) a = A(q) p`. Splitting the basis
//! into known coefficients `a1` (measured directly, e.g. masses) and unknown
//! ones `a2`, the stacked system `Y2 a2 = A p - Y1 a1` is solved in the
//! least-squares sense.

use biquad::{Biquad, Coefficients, DirectForm2Transposed, ToHertz, Type, Q_BUTTERWORTH_F64};
use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::dynamics::{actuator_map, coefficient_basis, coefficient_count, regressor};
use crate::error::{Error, Result};
use crate::kinematics::SegmentGeometry;

/// Raw logged samples: time, configuration and chamber pressures.
#[derive(Debug, Clone, Default)]
pub struct SampleBatch {
    pub time: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub pressures: Vec<DVector<f64>>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.q.len() != self.time.len() || self.pressures.len() != self.time.len() {
            return Err(Error::invalid("sample columns have different lengths"));
        }
        if let Some(w) = self.time.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(())
    }
}

/// Samples with numerically differentiated velocities and accelerations.
#[derive(Debug, Clone)]
pub struct DifferentiatedBatch {
    pub time: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub qdot: Vec<DVector<f64>>,
    pub qddot: Vec<DVector<f64>>,
    pub pressures: Vec<DVector<f64>>,
}

impl DifferentiatedBatch {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Drops samples with `time < t_start` (start-up transients).
    pub fn skip_before(mut self, t_start: f64) -> Self {
        let first = self.time.iter().position(|&t| t >= t_start).unwrap_or(self.time.len());
        self.time.drain(..first);
        self.q.drain(..first);
        self.qdot.drain(..first);
        self.qddot.drain(..first);
        self.pressures.drain(..first);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DifferentiationConfig {
    /// Zero-phase low-pass cutoff applied to `q` before differencing; `None`
    /// disables smoothing.
    pub smoothing_cutoff_hz: Option<f64>,
}

impl DifferentiationConfig {
    /// Smoothing setting for measured (noisy) logs.
    pub fn for_noisy_logs() -> Self {
        Self {
            smoothing_cutoff_hz: Some(2.0),
        }
    }
}

/// Finite-difference weights for derivatives `0..=order` at `x0` over the
/// nodes `xs` (Fornberg's recursion). `w[d][j]` weights node `j` for the
/// `d`-th derivative.
pub(crate) fn fd_weights(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

/// Zero-phase second-order Butterworth low-pass (forward-backward pass with
/// odd-reflection padding).
pub fn zero_phase_lowpass(signal: &[f64], sample_rate_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 2 {
        return Ok(signal.to_vec());
    }
    let coeffs = Coefficients::<f64>::from_params(Type::LowPass, sample_rate_hz.hz(), cutoff_hz.hz(), Q_BUTTERWORTH_F64)
        .map_err(|e| Error::invalid(format!("low-pass design failed: {e:?}")))?;

    let pad = ((3.0 * sample_rate_hz / cutoff_hz).ceil() as usize).clamp(1, n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * signal[0] - signal[k]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|k| 2.0 * signal[n - 1] - signal[n - 1 - k]));

    let run = |data: &mut Vec<f64>| {
        let mut filter = DirectForm2Transposed::<f64>::new(coeffs);
        // start from the steady state of the first value to avoid a step
        let first = data[0];
        for _ in 0..(4 * pad) {
            filter.run(first);
        }
        for v in data.iter_mut() {
            *v = filter.run(*v);
        }
    };
    run(&mut ext);
    ext.reverse();
    run(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Velocities and accelerations by finite differences: three-point central
/// stencils inside, second-order one-sided stencils at both ends.
pub fn differentiate_samples(batch: &SampleBatch, cfg: &DifferentiationConfig) -> Result<DifferentiatedBatch> {
    batch.validate()?;
    let n = batch.len();
    if n < 5 {
        return Err(Error::invalid(format!("need at least 5 samples, got {n}")));
    }
    let dof = batch.q[0].len();
    if batch.q.iter().any(|q| q.len() != dof) {
        return Err(Error::invalid("configuration dimension changes between samples"));
    }

    let mut q = batch.q.clone();
    if let Some(cutoff) = cfg.smoothing_cutoff_hz {
        let rate = (n - 1) as f64 / (batch.time[n - 1] - batch.time[0]);
        for k in 0..dof {
            let column: Vec<f64> = batch.q.iter().map(|v| v[k]).collect();
            let smooth = zero_phase_lowpass(&column, rate, cutoff)?;
            for (row, value) in q.iter_mut().zip(smooth) {
                row[k] = value;
            }
        }
    }

    let t = &batch.time;
    let mut qdot = Vec::with_capacity(n);
    let mut qddot = Vec::with_capacity(n);
    for i in 0..n {
        let (vel_nodes, acc_nodes): (Vec<usize>, Vec<usize>) = if i == 0 {
            ((0..3).collect(), (0..4).collect())
        } else if i == n - 1 {
            ((n - 3..n).collect(), (n - 4..n).collect())
        } else {
            ((i - 1..=i + 1).collect(), (i - 1..=i + 1).collect())
        };
        let combine = |nodes: &[usize], d: usize| -> DVector<f64> {
            let xs: Vec<f64> = nodes.iter().map(|&j| t[j]).collect();
            let w = fd_weights(t[i], &xs, d);
            let mut acc = DVector::zeros(dof);
            for (wj, &j) in w[d].iter().zip(nodes) {
                acc += &q[j] * *wj;
            }
            acc
        };
        qdot.push(combine(&vel_nodes, 1));
        qddot.push(combine(&acc_nodes, 2));
    }

    Ok(DifferentiatedBatch {
        time: batch.time.clone(),
        q,
        qdot,
        qddot,
        pressures: batch.pressures.clone(),
    })
}

/// Partition of the coefficient basis into known and unknown entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSplit {
    pub known_indices: Vec<usize>,
    pub known_values: Vec<f64>,
    pub unknown_indices: Vec<usize>,
}

impl CoefficientSplit {
    /// Everything not listed as known is unknown.
    pub fn new(coefficient_count: usize, known: &[(usize, f64)]) -> Result<Self> {
        let mut known_indices = Vec::with_capacity(known.len());
        let mut known_values = Vec::with_capacity(known.len());
        for &(i, v) in known {
            if i >= coefficient_count {
                return Err(Error::invalid(format!("known coefficient index {i} out of range")));
            }
            if known_indices.contains(&i) {
                return Err(Error::invalid(format!("coefficient {i} listed twice")));
            }
            known_indices.push(i);
            known_values.push(v);
        }
        let unknown_indices = (0..coefficient_count).filter(|i| !known_indices.contains(i)).collect();
        Ok(Self {
            known_indices,
            known_values,
            unknown_indices,
        })
    }

    /// Masses (segments and tip) known, stiffness and damping unknown.
    pub fn masses_known(masses: &[f64], tip_mass: f64) -> Self {
        let n = masses.len();
        let mut known: Vec<(usize, f64)> = masses.iter().copied().enumerate().collect();
        known.push((3 * n, tip_mass));
        Self::new(coefficient_count(n), &known).expect("indices are in range and distinct")
    }

    pub fn validate(&self, coefficient_count: usize) -> Result<()> {
        if self.known_indices.len() != self.known_values.len() {
            return Err(Error::invalid("known indices and values differ in length"));
        }
        let mut seen = vec![false; coefficient_count];
        for &i in self.known_indices.iter().chain(&self.unknown_indices) {
            if i >= coefficient_count || seen[i] {
                return Err(Error::invalid(format!("coefficient split is not a partition (index {i})")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("coefficient split does not cover the basis"));
        }
        Ok(())
    }
}

/// `Y2 a2 = rhs` stacked over all samples (`2n` rows per sample).
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub regressor: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub labels: Vec<String>,
}

pub fn build_stacked_system(
    batch: &DifferentiatedBatch,
    geom: &[SegmentGeometry],
    gravity: f64,
    split: &CoefficientSplit,
) -> Result<StackedSystem> {
    let n = geom.len();
    let r = coefficient_count(n);
    split.validate(r)?;
    let dof = 2 * n;
    let rows = dof * batch.len();
    let unknown = split.unknown_indices.len();
    let mut y2 = DMatrix::zeros(rows, unknown);
    let mut rhs = DVector::zeros(rows);
    let a1 = DVector::from_column_slice(&split.known_values);

    for k in 0..batch.len() {
        let (q, qd, qdd) = (&batch.q[k], &batch.qdot[k], &batch.qddot[k]);
        let y = regressor(geom, gravity, q, qd, qd, qdd)?;
        let a = actuator_map(geom, q)?;
        let p = &batch.pressures[k];
        if p.len() != a.ncols() {
            return Err(Error::invalid(format!(
                "sample {k}: {} pressures for {} chambers",
                p.len(),
                a.ncols()
            )));
        }
        let y1 = y.select_columns(&split.known_indices);
        let block = a * p - y1 * &a1;
        rhs.rows_mut(k * dof, dof).copy_from(&block);
        for (c, &j) in split.unknown_indices.iter().enumerate() {
            y2.view_mut((k * dof, c), (dof, 1)).copy_from(&y.column(j));
        }
    }
    let basis = coefficient_basis(n);
    Ok(StackedSystem {
        regressor: y2,
        rhs,
        labels: split.unknown_indices.iter().map(|&j| basis[j].to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub estimate: DVector<f64>,
    pub residual_norm: f64,
    /// Condition number of the column-equilibrated regressor.
    pub condition_number: f64,
}

pub fn solve_lsq(y: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<LsqSolution> {
    let labels: Vec<String> = (0..y.ncols()).map(|j| format!("x{j}")).collect();
    solve_lsq_labeled(y, rhs, &labels)
}

/// Least squares through the SVD of the column-equilibrated regressor.
pub fn solve_lsq_labeled(y: &DMatrix<f64>, rhs: &DVector<f64>, labels: &[String]) -> Result<LsqSolution> {
    let (rows, cols) = y.shape();
    if cols == 0 {
        return Err(Error::Degenerate("no unknown coefficients to estimate".into()));
    }
    if rhs.len() != rows {
        return Err(Error::invalid("right-hand side length does not match regressor rows"));
    }
    if rows < cols {
        return Err(Error::RankDeficient {
            rank: rows,
            expected: cols,
            directions: vec![format!("only {rows} equations for {cols} unknowns")],
        });
    }
    let scale = DVector::from_iterator(cols, y.column_iter().map(|c| c.norm()));
    let mut scaled = y.clone();
    for (j, s) in scale.iter().enumerate() {
        if *s > 0.0 {
            scaled.column_mut(j).unscale_mut(*s);
        }
    }
    let svd = SVD::new(scaled, true, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let tol = sigma_max * rows.max(cols) as f64 * f64::EPSILON;
    let rank = sigma.iter().filter(|&&s| s > tol).count();
    let v_t = svd.v_t.as_ref().expect("SVD computed with V^T");
    if rank < cols {
        let directions = (0..sigma.len())
            .filter(|&i| sigma[i] <= tol)
            .map(|i| describe_direction(&v_t.row(i).transpose(), labels))
            .collect();
        return Err(Error::RankDeficient {
            rank,
            expected: cols,
            directions,
        });
    }
    let u = svd.u.as_ref().expect("SVD computed with U");
    let projected = u.tr_mul(rhs).component_div(sigma);
    let mut estimate = v_t.tr_mul(&projected);
    estimate.component_div_assign(&scale);
    let residual_norm = (y * &estimate - rhs).norm();
    Ok(LsqSolution {
        estimate,
        residual_norm,
        condition_number: sigma_max / sigma.min(),
    })
}

fn describe_direction(v: &DVector<f64>, labels: &[String]) -> String {
    let terms: Vec<String> = v
        .iter()
        .zip(labels)
        .filter(|(c, _)| c.abs() > 1e-3)
        .map(|(c, l)| format!("{c:+.3}*{l}"))
        .collect();
    terms.join(" ")
}

/// Output of the identification pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationReport {
    /// Estimated unknown coefficients, by basis label.
    pub coefficients: Vec<(String, f64)>,
    /// Norm of the stacked residual.
    pub residual: f64,
    /// `None` when every coefficient was known.
    pub condition_number: Option<f64>,
    pub sample_count: usize,
}

/// Differentiation, stacking and solve in one call.
pub fn identify(
    batch: &SampleBatch,
    geom: &[SegmentGeometry],
    gravity: f64,
    split: &CoefficientSplit,
    diff: &DifferentiationConfig,
    skip_before: f64,
) -> Result<IdentificationReport> {
    let differentiated = differentiate_samples(batch, diff)?.skip_before(skip_before);
    if differentiated.is_empty() {
        return Err(Error::invalid("no samples left after skipping the start-up window"));
    }
    let system = build_stacked_system(&differentiated, geom, gravity, split)?;
    if system.labels.is_empty() {
        return Ok(IdentificationReport {
            coefficients: Vec::new(),
            residual: system.rhs.norm(),
            condition_number: None,
            sample_count: differentiated.len(),
        });
    }
    let solution = solve_lsq_labeled(&system.regressor, &system.rhs, &system.labels)?;
    Ok(IdentificationReport {
        coefficients: system.labels.into_iter().zip(solution.estimate.iter().copied()).collect(),
        residual: solution.residual_norm,
        condition_number: Some(solution.condition_number),
        sample_count: differentiated.len(),
    })
}
