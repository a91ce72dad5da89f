//! Experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::Deserialize;
use softarm::control::{InverseDynamicsGains, SlidingParams};
use softarm::dynamics::{coefficient_count, ArmModel, CoefficientVector, DynamicParameters};
use softarm::identification::{CoefficientSplit, DifferentiationConfig};
use softarm::kinematics::{DampedPinvConfig, SegmentGeometry};
use softarm::presets;
use softarm::simulator::{CircleTrajectory, Disturbance, MetricsConfig, PayloadChange, PlantTruth, SimConfig};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arm: ArmConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub initial: Option<InitialState>,
    #[serde(default)]
    pub trajectory: Option<TrajectoryConfig>,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub disturbance: Vec<Disturbance>,
    #[serde(default)]
    pub payload_schedule: Vec<PayloadChange>,
    #[serde(default)]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub metrics: Option<MetricsConfig>,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Geometry and true parameters, one entry per segment.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub lengths: Vec<f64>,
    #[serde(default = "default_offset")]
    pub chamber_offset: f64,
    #[serde(default = "default_area")]
    pub chamber_area: f64,
    pub masses: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub damping: Vec<f64>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// True tip payload (kg), unknown to the controllers.
    #[serde(default)]
    pub payload: f64,
}

fn default_offset() -> f64 {
    presets::CHAMBER_OFFSET
}

fn default_area() -> f64 {
    presets::CHAMBER_AREA
}

fn default_gravity() -> f64 {
    presets::GRAVITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: Vec<f64>,
    #[serde(default)]
    pub qdot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Circle {
        #[serde(default = "default_center")]
        center: [f64; 3],
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_omega")]
        omega: f64,
    },
    Setpoint {
        q: Vec<f64>,
    },
}

fn default_center() -> [f64; 3] {
    [0.0, 0.0, presets::CIRCLE_HEIGHT]
}

fn default_radius() -> f64 {
    presets::CIRCLE_RADIUS
}

fn default_omega() -> f64 {
    presets::CIRCLE_OMEGA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Adaptive,
    Invdyn,
    Feedforward,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Adaptive => "adaptive",
            ControllerKind::Invdyn => "invdyn",
            ControllerKind::Feedforward => "feedforward",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_kind")]
    pub kind: ControllerKind,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default)]
    pub task_pinv: Option<DampedPinvConfig>,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub invdyn: InvdynConfig,
    #[serde(default)]
    pub feedforward: FeedForwardConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            p_max: default_p_max(),
            task_pinv: None,
            adaptive: AdaptiveConfig::default(),
            invdyn: InvdynConfig::default(),
            feedforward: FeedForwardConfig::default(),
        }
    }
}

fn default_kind() -> ControllerKind {
    ControllerKind::Adaptive
}

fn default_p_max() -> f64 {
    presets::P_MAX
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// Gains; preset values when absent.
    #[serde(default)]
    pub sliding: Option<SlidingParams>,
    /// Initial coefficient estimate over `(m_i.., k_si.., k_di.., m_tip)`.
    #[serde(default)]
    pub initial_estimate: Option<Vec<f64>>,
    /// Per-coefficient factors on the payload-free truth, used when no
    /// explicit estimate is given. Defaults to all ones.
    #[serde(default)]
    pub estimate_factors: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_bound: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvdynConfig {
    #[serde(default)]
    pub gains: Option<InverseDynamicsGains>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedForwardConfig {
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    /// Chambers per segment; three each when absent.
    #[serde(default)]
    pub chambers_per_segment: Option<Vec<usize>>,
}

impl Default for FeedForwardConfig {
    fn default() -> Self {
        Self {
            amplitude: default_amplitude(),
            period: default_period(),
            chambers_per_segment: None,
        }
    }
}

fn default_amplitude() -> f64 {
    40e3
}

fn default_period() -> f64 {
    16.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    /// Treat the segment masses (and a zero tip mass) as known.
    #[serde(default = "yes")]
    pub masses_known: bool,
    /// Further known coefficients as `[index, value]` pairs.
    #[serde(default)]
    pub known: Vec<(usize, f64)>,
    #[serde(default = "default_skip")]
    pub skip_before: f64,
    #[serde(default)]
    pub smoothing_cutoff_hz: Option<f64>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            masses_known: true,
            known: Vec::new(),
            skip_before: default_skip(),
            smoothing_cutoff_hz: None,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_skip() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_payloads")]
    pub payloads: Vec<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            payloads: default_payloads(),
        }
    }
}

fn default_payloads() -> Vec<f64> {
    presets::PAYLOADS.to_vec()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_bench_segments")]
    pub segments: Vec<usize>,
    #[serde(default = "default_bench_samples")]
    pub samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            segments: default_bench_segments(),
            samples: default_bench_samples(),
        }
    }
}

fn default_bench_segments() -> Vec<usize> {
    vec![2, 4]
}

fn default_bench_samples() -> usize {
    2000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display()), None))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::config(e.to_string(), None))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(e.inner().to_string(), Some(path))
    })
}

fn config_err(e: softarm::Error) -> CliError {
    CliError::config(e.to_string(), None)
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

impl ExperimentConfig {
    pub fn segments(&self) -> usize {
        self.arm.lengths.len()
    }

    pub fn geometry(&self) -> Result<Vec<SegmentGeometry>, CliError> {
        self.arm
            .lengths
            .iter()
            .map(|&l| SegmentGeometry::new(l, self.arm.chamber_offset, self.arm.chamber_area).map_err(config_err))
            .collect()
    }

    /// The arm as the controllers believe it: no payload.
    pub fn nominal_arm(&self) -> Result<ArmModel, CliError> {
        let params = DynamicParameters {
            masses: self.arm.masses.clone(),
            stiffness: self.arm.stiffness.clone(),
            damping: self.arm.damping.clone(),
            gravity: self.arm.gravity,
            tip_payload_mass: 0.0,
        };
        ArmModel::new(self.geometry()?, params).map_err(config_err)
    }

    pub fn plant(&self, payload: f64) -> Result<PlantTruth, CliError> {
        let mut model = self.nominal_arm()?;
        model.params.tip_payload_mass = payload;
        model.params.validate().map_err(config_err)?;
        let mut plant = PlantTruth::new(model);
        for d in &self.disturbance {
            plant = plant.with_disturbance(d.clone());
        }
        plant.payload_schedule = self.payload_schedule.clone();
        plant.validate().map_err(config_err)?;
        Ok(plant)
    }

    pub fn task_pinv(&self) -> DampedPinvConfig {
        self.controller.task_pinv.unwrap_or_else(presets::task_pinv)
    }

    pub fn initial_estimate(&self) -> Result<CoefficientVector, CliError> {
        let n = self.segments();
        let a = &self.controller.adaptive;
        let values = match (&a.initial_estimate, &a.estimate_factors) {
            (Some(_), Some(_)) => {
                return Err(CliError::config(
                    "give either initial_estimate or estimate_factors, not both",
                    Some("controller.adaptive".into()),
                ))
            }
            (Some(v), None) => vector(v),
            (None, f) => {
                let truth = CoefficientVector::from_parameters(&self.nominal_arm()?.params).values;
                match f {
                    Some(f) if f.len() != coefficient_count(n) => {
                        return Err(CliError::config(
                            format!("estimate_factors needs {} entries", coefficient_count(n)),
                            Some("controller.adaptive.estimate_factors".into()),
                        ))
                    }
                    Some(f) => truth.component_mul(&vector(f)),
                    None => truth,
                }
            }
        };
        CoefficientVector::new(n, values).map_err(config_err)
    }

    pub fn sliding_params(&self, tracked: usize) -> SlidingParams {
        self.controller
            .adaptive
            .sliding
            .clone()
            .unwrap_or_else(|| presets::sliding_params_for(self.segments(), tracked))
    }

    pub fn invdyn_gains(&self, tracked: usize) -> InverseDynamicsGains {
        self.controller
            .invdyn
            .gains
            .clone()
            .unwrap_or_else(|| InverseDynamicsGains::critically_damped(20.0, tracked, 10.0))
    }

    pub fn chambers(&self) -> Vec<usize> {
        self.controller
            .feedforward
            .chambers_per_segment
            .clone()
            .unwrap_or_else(|| vec![3; self.segments()])
    }

    pub fn circle(&self) -> Result<Option<CircleTrajectory>, CliError> {
        match &self.trajectory {
            Some(TrajectoryConfig::Circle { center, radius, omega }) => CircleTrajectory::new(Vector3::from(*center), *radius, *omega)
                .map(Some)
                .map_err(config_err),
            _ => Ok(None),
        }
    }

    pub fn split(&self) -> Result<CoefficientSplit, CliError> {
        let mut known = Vec::new();
        if self.identify.masses_known {
            known.extend(self.arm.masses.iter().copied().enumerate());
            known.push((coefficient_count(self.segments()) - 1, 0.0));
        }
        for &(i, v) in &self.identify.known {
            known.retain(|&(j, _)| j != i);
            known.push((i, v));
        }
        known.sort_by_key(|&(i, _)| i);
        CoefficientSplit::new(coefficient_count(self.segments()), &known).map_err(config_err)
    }

    pub fn differentiation(&self) -> DifferentiationConfig {
        DifferentiationConfig {
            smoothing_cutoff_hz: self.identify.smoothing_cutoff_hz,
        }
    }
}
