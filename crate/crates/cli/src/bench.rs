use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use softarm::dynamics::{dynamic_terms, regressor, ArmModel, DynamicParameters};
use softarm::kinematics::SegmentGeometry;
use softarm::presets;

use crate::config::{self, BenchConfig};
use crate::{BenchArgs, CliError};

#[derive(Debug, Serialize)]
pub struct LatencyReport {
    pub segments: usize,
    pub samples: usize,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub mean_ns: f64,
    /// Sum over every benchmarked state, identical for identical seeds.
    pub state_checksum: f64,
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn arm(n: usize) -> Result<ArmModel, CliError> {
    let geometry = (0..n)
        .map(|_| SegmentGeometry::new(presets::SEGMENT_LENGTH, presets::CHAMBER_OFFSET, presets::CHAMBER_AREA))
        .collect::<Result<Vec<_>, _>>()?;
    let params = DynamicParameters {
        masses: vec![presets::SEGMENT_MASSES[0]; n],
        stiffness: vec![presets::STIFFNESS[0]; n],
        damping: vec![presets::DAMPING[0]; n],
        gravity: presets::GRAVITY,
        tip_payload_mass: 0.0,
    };
    Ok(ArmModel::new(geometry, params)?)
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

pub fn latency(n: usize, samples: usize, seed: u64) -> Result<LatencyReport, CliError> {
    let model = arm(n)?;
    let dof = 2 * n;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(samples);
    let mut checksum = 0.0;
    for _ in 0..samples {
        let q = DVector::from_fn(dof, |i, _| {
            if i % 2 == 0 {
                uniform(&mut r, -PI, PI)
            } else {
                uniform(&mut r, 0.05, 2.0)
            }
        });
        let qdot = DVector::from_fn(dof, |_, _| uniform(&mut r, -2.0, 2.0));
        let qdot_r = DVector::from_fn(dof, |_, _| uniform(&mut r, -2.0, 2.0));
        let qddot_r = DVector::from_fn(dof, |_, _| uniform(&mut r, -20.0, 20.0));
        checksum += q.sum() + qdot.sum() + qdot_r.sum() + qddot_r.sum();
        let start = Instant::now();
        let terms = dynamic_terms(&model, &q, &qdot)?;
        let y = regressor(&model.geometry, model.params.gravity, &q, &qdot, &qdot_r, &qddot_r)?;
        let elapsed = start.elapsed();
        std::hint::black_box((terms, y));
        times.push(elapsed.as_nanos() as u64);
    }
    let mean_ns = times.iter().sum::<u64>() as f64 / samples as f64;
    times.sort_unstable();
    Ok(LatencyReport {
        segments: n,
        samples,
        p50_ns: percentile(&times, 0.50),
        p95_ns: percentile(&times, 0.95),
        p99_ns: percentile(&times, 0.99),
        mean_ns,
        state_checksum: checksum,
    })
}

pub fn run(args: &BenchArgs) -> Result<Value, CliError> {
    let (bench, dir) = match &args.config {
        Some(path) => {
            let cfg = config::load(path)?;
            (cfg.bench, cfg.output.dir)
        }
        None => (BenchConfig::default(), "out".into()),
    };
    let segments = args.segments.clone().unwrap_or(bench.segments);
    let samples = args.samples.unwrap_or(bench.samples);
    if samples == 0 || segments.is_empty() || segments.contains(&0) {
        return Err(CliError::config("need samples >= 1 and segment counts >= 1", Some("bench".into())));
    }
    let reports = segments
        .iter()
        .map(|&n| latency(n, samples, args.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = json!({ "seed": args.seed, "latency": reports });
    let out = args.out.clone().unwrap_or(dir);
    std::fs::create_dir_all(&out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(out.join("bench.json"), text + "\n").map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(summary)
}
