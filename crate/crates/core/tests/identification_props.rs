mod common;

use std::sync::OnceLock;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use softarm::identification::*;
use softarm::presets;
use softarm::simulator::*;

/// Short open-loop excitation log of the reference arm.
fn excitation() -> &'static SampleBatch {
    static BATCH: OnceLock<SampleBatch> = OnceLock::new();
    BATCH.get_or_init(|| {
        let plant = PlantTruth::new(presets::arm());
        let mut ff = FeedForward {
            amplitude: 40e3,
            period: 4.0,
            chambers_per_segment: vec![3, 3],
        };
        let mut cfg = SimConfig::new(3.0, 1000.0);
        cfg.dt_physics = 2e-4;
        cfg.log_every = 10;
        let q0 = DVector::from_vec(vec![std::f64::consts::PI, 0.05, std::f64::consts::PI, 0.05]);
        integrate(&plant, &mut ff, &Setpoint(q0.clone()), &cfg, &q0, &DVector::zeros(4))
            .unwrap()
            .samples()
    })
}

fn estimate(batch: &SampleBatch, mass_scale: f64) -> Vec<f64> {
    let masses: Vec<f64> = presets::SEGMENT_MASSES.iter().map(|m| m * mass_scale).collect();
    let split = CoefficientSplit::masses_known(&masses, 0.0);
    let report = identify(
        batch,
        &presets::geometry(),
        presets::GRAVITY,
        &split,
        &DifferentiationConfig::default(),
        0.5,
    )
    .unwrap();
    report.coefficients.iter().map(|(_, v)| *v).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimate_scales_with_pressures_and_coefficients(c in 0.1..10.0f64) {
        let base = excitation();
        let scaled = SampleBatch {
            time: base.time.clone(),
            q: base.q.clone(),
            pressures: base.pressures.iter().map(|p| p * c).collect(),
        };
        let a = estimate(base, 1.0);
        let b = estimate(&scaled, c);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((y - c * x).abs() <= 1e-9 * (c * x).abs().max(1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn residual_is_orthogonal_to_columns(seed in any::<u64>(), rows in 8usize..60, cols in 1usize..6) {
        let mut r = rng(seed);
        let scales: Vec<f64> = (0..cols).map(|_| 10f64.powf(uniform(&mut r, -4.0, 2.0))).collect();
        let y = DMatrix::from_fn(rows, cols, |_, j| uniform(&mut r, -1.0, 1.0) * scales[j]);
        let rhs = random_vec(&mut r, rows, 1.0);
        let sol = solve_lsq(&y, &rhs).unwrap();
        let residual = &y * &sol.estimate - &rhs;
        for j in 0..cols {
            let col = y.column(j);
            prop_assert!(col.dot(&residual).abs() <= 1e-8 * col.norm() * rhs.norm());
        }
        prop_assert!((residual.norm() - sol.residual_norm).abs() <= 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn consistent_systems_are_solved_exactly(seed in any::<u64>(), rows in 8usize..60, cols in 1usize..6) {
        let mut r = rng(seed);
        let y = DMatrix::from_fn(rows, cols, |_, _| uniform(&mut r, -1.0, 1.0));
        let truth = random_vec(&mut r, cols, 5.0);
        let sol = solve_lsq(&y, &(&y * &truth)).unwrap();
        prop_assert!((&sol.estimate - &truth).amax() <= 1e-9 * truth.amax().max(1.0));
    }
}

#[test]
fn short_noise_free_log_recovers_stiffness() {
    let est = estimate(excitation(), 1.0);
    let truth = [presets::STIFFNESS[0], presets::STIFFNESS[1]];
    for (e, t) in est.iter().zip(truth) {
        assert!(((e - t) / t).abs() < 0.02, "estimate {e} truth {t}");
    }
}
