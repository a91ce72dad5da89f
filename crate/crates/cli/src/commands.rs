use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use softarm::control::{AdaptiveController, Controller, InverseDynamicsController};
use softarm::identification::identify as identify_log;
use softarm::presets;
use softarm::simulator::{integrate, metrics, CircleTrajectory, FeedForward, Metrics, Setpoint, TrajectoryLog};
use tracing::info;

use crate::config::{self, ControllerKind, ExperimentConfig, TrajectoryConfig};
use crate::{CliError, Common, IdentifyArgs, RunArgs};

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    cfg.sim
        .substeps()
        .map_err(|e| CliError::config(e.to_string(), Some("sim".into())))?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok((cfg, out))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    write(path, &(text + "\n"))
}

enum Reference {
    Circle(CircleTrajectory),
    Setpoint(Setpoint),
}

/// Initial state, reference and tracked dimension from the config.
fn scenario(cfg: &ExperimentConfig) -> Result<(DVector<f64>, DVector<f64>, Reference, usize), CliError> {
    let dof = 2 * cfg.segments();
    let explicit = match &cfg.initial {
        Some(init) => {
            if init.q.len() != dof {
                return Err(CliError::config(format!("initial.q needs {dof} entries"), Some("initial.q".into())));
            }
            let qdot = init.qdot.clone().unwrap_or_else(|| vec![0.0; dof]);
            if qdot.len() != dof {
                return Err(CliError::config(
                    format!("initial.qdot needs {dof} entries"),
                    Some("initial.qdot".into()),
                ));
            }
            Some((DVector::from_vec(init.q.clone()), DVector::from_vec(qdot)))
        }
        None => None,
    };
    match (cfg.circle()?, &cfg.trajectory) {
        (Some(circle), _) => {
            let (q0, qdot0) = match explicit {
                Some(s) => s,
                None => presets::circle_initial_state(&cfg.geometry()?, &circle)?,
            };
            Ok((q0, qdot0, Reference::Circle(circle), 3))
        }
        (None, Some(TrajectoryConfig::Setpoint { q })) => {
            if q.len() != dof {
                return Err(CliError::config(
                    format!("trajectory.q needs {dof} entries"),
                    Some("trajectory.q".into()),
                ));
            }
            let (q0, qdot0) = explicit.ok_or_else(|| CliError::config("a setpoint run needs [initial]", Some("initial".into())))?;
            Ok((q0, qdot0, Reference::Setpoint(Setpoint(DVector::from_vec(q.clone()))), dof))
        }
        (None, _) => {
            let (q0, qdot0) = explicit.ok_or_else(|| CliError::config("missing [trajectory] or [initial]", Some("initial".into())))?;
            let hold = Setpoint(q0.clone());
            Ok((q0, qdot0, Reference::Setpoint(hold), dof))
        }
    }
}

fn build_controller(cfg: &ExperimentConfig, kind: ControllerKind, tracked: usize) -> Result<Box<dyn Controller>, CliError> {
    let c = &cfg.controller;
    let invalid = |e: softarm::Error| CliError::config(e.to_string(), Some(format!("controller.{}", kind.name())));
    Ok(match kind {
        ControllerKind::Adaptive => {
            let mut ctl = AdaptiveController::new(
                cfg.geometry()?,
                cfg.arm.gravity,
                cfg.sliding_params(tracked),
                cfg.task_pinv(),
                cfg.initial_estimate()?,
                c.p_max,
            )
            .map_err(invalid)?;
            if let Some(b) = &c.adaptive.initial_bound {
                if b.len() != 2 * cfg.segments() || b.iter().any(|x| !(*x >= 0.0)) {
                    return Err(CliError::config(
                        "initial_bound needs one entry >= 0 per coordinate",
                        Some("controller.adaptive.initial_bound".into()),
                    ));
                }
                ctl.state.b_hat = DVector::from_vec(b.clone());
            }
            Box::new(ctl)
        }
        ControllerKind::Invdyn => Box::new(
            InverseDynamicsController::new(cfg.nominal_arm()?, cfg.invdyn_gains(tracked), cfg.task_pinv(), c.p_max).map_err(invalid)?,
        ),
        ControllerKind::Feedforward => {
            let ff = &c.feedforward;
            let chambers = cfg.chambers();
            if chambers.len() != cfg.segments() || chambers.iter().any(|&k| k != 3) {
                return Err(CliError::config(
                    "the arm model has three chambers per segment",
                    Some("controller.feedforward.chambers_per_segment".into()),
                ));
            }
            if !(ff.amplitude >= 0.0 && ff.period > 0.0) {
                return Err(CliError::config(
                    "need amplitude >= 0 and period > 0",
                    Some("controller.feedforward".into()),
                ));
            }
            Box::new(FeedForward {
                amplitude: ff.amplitude,
                period: ff.period,
                chambers_per_segment: chambers,
            })
        }
    })
}

fn run(cfg: &ExperimentConfig, kind: ControllerKind, payload: f64) -> Result<TrajectoryLog, CliError> {
    let plant = cfg.plant(payload)?;
    let (q0, qdot0, reference, tracked) = scenario(cfg)?;
    let mut controller = build_controller(cfg, kind, tracked)?;
    info!(controller = kind.name(), payload, duration = cfg.sim.duration, "run");
    let log = match &reference {
        Reference::Circle(c) => integrate(&plant, controller.as_mut(), c, &cfg.sim, &q0, &qdot0),
        Reference::Setpoint(s) => integrate(&plant, controller.as_mut(), s, &cfg.sim, &q0, &qdot0),
    }?;
    info!(rows = log.rows.len(), "done");
    Ok(log)
}

fn run_metrics(cfg: &ExperimentConfig, log: &TrajectoryLog) -> Result<Metrics, CliError> {
    Ok(metrics(log, &cfg.metrics.unwrap_or_default())?)
}

fn save_log(log: &TrajectoryLog, path: &Path) -> Result<(), CliError> {
    write(path, &log.to_csv_string()?)
}

pub fn simulate(args: &RunArgs) -> Result<Value, CliError> {
    let (cfg, out) = load(&args.common)?;
    let kind = args.controller.unwrap_or(cfg.controller.kind);
    let log = run(&cfg, kind, args.payload.unwrap_or(cfg.arm.payload))?;
    let path = out.join("log.csv");
    save_log(&log, &path)?;
    Ok(json!({ "log": path, "rows": log.rows.len() }))
}

pub fn track(args: &RunArgs) -> Result<Value, CliError> {
    let (cfg, out) = load(&args.common)?;
    let kind = args.controller.unwrap_or(cfg.controller.kind);
    if kind == ControllerKind::Feedforward {
        return Err(CliError::config(
            "track needs a feedback controller",
            Some("controller.kind".into()),
        ));
    }
    if cfg.trajectory.is_none() {
        return Err(CliError::config("track needs a [trajectory]", Some("trajectory".into())));
    }
    let payload = args.payload.unwrap_or(cfg.arm.payload);
    let log = run(&cfg, kind, payload)?;
    let m = run_metrics(&cfg, &log)?;
    save_log(&log, &out.join("log.csv"))?;
    let summary = json!({ "controller": kind.name(), "payload": payload, "metrics": m });
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    controller: &'static str,
    payload: f64,
    log: PathBuf,
    #[serde(flatten)]
    metrics: Metrics,
}

pub fn compare(args: &RunArgs) -> Result<Value, CliError> {
    let (cfg, out) = load(&args.common)?;
    if cfg.trajectory.is_none() {
        return Err(CliError::config("compare needs a [trajectory]", Some("trajectory".into())));
    }
    let payloads = match args.payload {
        Some(p) => vec![p],
        None => cfg.compare.payloads.clone(),
    };
    let kinds = match args.controller {
        Some(k) => vec![k],
        None => vec![ControllerKind::Adaptive, ControllerKind::Invdyn],
    };
    let mut rows = Vec::new();
    for &payload in &payloads {
        for &kind in &kinds {
            let log = run(&cfg, kind, payload)?;
            let path = out.join(format!("{}_{}g.csv", kind.name(), (payload * 1e3).round()));
            save_log(&log, &path)?;
            rows.push(ComparisonRow {
                controller: kind.name(),
                payload,
                log: path,
                metrics: run_metrics(&cfg, &log)?,
            });
        }
    }
    let summary = json!({ "runs": rows });
    write_json(&out.join("comparison.json"), &summary)?;
    Ok(summary)
}

pub fn identify(args: &IdentifyArgs) -> Result<Value, CliError> {
    let (cfg, out) = load(&args.common)?;
    let split = cfg.split()?;
    let geometry = cfg.geometry()?;
    let file = fs::File::open(&args.log).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", args.log.display())))?;
    let log = TrajectoryLog::read_csv(file)?;
    let report = identify_log(
        &log.samples(),
        &geometry,
        cfg.arm.gravity,
        &split,
        &cfg.differentiation(),
        cfg.identify.skip_before,
    )?;
    let coefficients: serde_json::Map<String, Value> = report.coefficients.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let summary = json!({
        "coefficients": coefficients,
        "residual": report.residual,
        "condition_number": report.condition_number,
        "sample_count": report.sample_count,
    });
    write_json(&out.join("identification.json"), &summary)?;
    Ok(summary)
}
