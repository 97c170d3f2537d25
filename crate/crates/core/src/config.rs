//! Scenario configuration. JSON in, validated world/planner/controller
//! parameters out. Unknown keys are rejected at every level.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::graph::default_sigma;
use crate::planning::PlannerConfig;
use crate::world::{CirclePath, RiskField, ScriptedFailure, SensorCatalog, SensorKind, TargetEnsemble, WorldError};
use crate::{Mat2, Vec2};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid world: {0}")]
    World(#[from] WorldError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Decentralized,
    Centralized,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "decentralized" => Ok(Mode::Decentralized),
            "centralized" => Ok(Mode::Centralized),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// A scalar applies to every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerTarget {
    All(f64),
    Each(Vec<f64>),
}

impl PerTarget {
    pub fn expand(&self, m: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            PerTarget::All(v) => Ok(vec![*v; m]),
            PerTarget::Each(v) if v.len() == m => Ok(v.clone()),
            PerTarget::Each(v) => invalid(format!("expected {m} per-target values, got {}", v.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsConfig {
    pub initial: Vec<[f64; 2]>,
    /// Working sensor kinds per robot at t = 0; all kinds when omitted.
    #[serde(default)]
    pub sensors: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

fn default_process_noise() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsConfig {
    pub paths: Vec<CirclePath>,
    /// Q = process_noise · I unless `dynamics` gives full matrices.
    #[serde(default = "default_process_noise")]
    pub process_noise: f64,
    #[serde(default)]
    pub dynamics: Option<DynamicsConfig>,
}

fn default_failure_gain() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub peaks: PerTarget,
    /// One 2×2 shape matrix per target, or a single one shared by all.
    pub shapes: Vec<[[f64; 2]; 2]>,
    #[serde(default)]
    pub risk_exponent_uses_inverse: bool,
    #[serde(default = "default_failure_gain")]
    pub failure_gain: f64,
}

fn standard_sensors() -> Vec<SensorKind> {
    SensorCatalog::standard(1.0, 0.1).kinds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorsConfig {
    #[serde(default = "standard_sensors")]
    pub kinds: Vec<SensorKind>,
    #[serde(default)]
    pub noise_free: bool,
}

impl Default for SensorsConfig {
    fn default() -> Self {
        Self { kinds: standard_sensors(), noise_free: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommConfig {
    pub radius: f64,
    /// Defaults to R⁴/ln 11 (maximum edge weight 10).
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn d_one() -> f64 {
    1.0
}
fn d_eps() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "d_one")]
    pub d_max: f64,
    #[serde(default = "d_one")]
    pub d_min: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { d_max: 1.0, d_min: 1.0, epsilon: 0.25 }
    }
}

fn d_true() -> bool {
    true
}
fn d_fd() -> f64 {
    1e-4
}
fn d_iters() -> usize {
    200
}
fn d_restarts() -> usize {
    1
}
fn d_cap() -> f64 {
    1e6
}
fn d_damping() -> f64 {
    0.5
}
fn d_tol() -> f64 {
    1e-3
}
fn d_br_rounds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub q1: f64,
    pub q2: f64,
    pub rho1: PerTarget,
    pub rho2: f64,
    #[serde(default = "d_true")]
    pub risk_aware: bool,
    #[serde(default = "d_fd")]
    pub fd_step: f64,
    #[serde(default = "d_iters")]
    pub max_iters: usize,
    #[serde(default = "d_restarts")]
    pub random_restarts: usize,
    #[serde(default = "d_cap")]
    pub trace_cap: f64,
    #[serde(default = "d_damping")]
    pub damping: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_br_rounds")]
    pub max_rounds: usize,
}

fn d_pi_rounds() -> usize {
    40
}
fn d_ten() -> usize {
    10
}
fn d_gain() -> f64 {
    1.0
}
fn d_floor() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    /// Rounds per step, rounded up to whole blocks.
    #[serde(default = "d_pi_rounds")]
    pub rounds: usize,
    #[serde(default = "d_ten")]
    pub power_rounds: usize,
    #[serde(default = "d_ten")]
    pub settle_rounds: usize,
    #[serde(default = "d_gain")]
    pub k1: f64,
    #[serde(default = "d_gain")]
    pub k2: f64,
    #[serde(default = "d_gain")]
    pub k3: f64,
    #[serde(default = "d_floor")]
    pub nu_floor: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { rounds: 40, power_rounds: 10, settle_rounds: 10, k1: 1.0, k2: 1.0, k3: 1.0, nu_floor: 1e-6 }
    }
}

fn d_prior_var() -> f64 {
    1.0
}
fn d_consensus_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Initial covariance is this times I; the initial estimate is drawn
    /// from that prior around the true positions.
    #[serde(default = "d_prior_var")]
    pub initial_variance: f64,
    #[serde(default = "d_consensus_tol")]
    pub consensus_tol: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { initial_variance: 1.0, consensus_tol: 1e-8 }
    }
}

fn d_dt() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub steps: usize,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default)]
    pub mode: Mode,
    pub robots: RobotsConfig,
    pub targets: TargetsConfig,
    pub risk: RiskConfig,
    #[serde(default)]
    pub sensors: SensorsConfig,
    pub comm: CommConfig,
    pub planner: PlannerSection,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub scripted_failures: Vec<ScriptedFailure>,
    /// Fixed sensor margins for `sweep`.
    #[serde(default)]
    pub sweep_eta: Vec<f64>,
}

fn matrix(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return invalid(format!("{name} must be {n}x{n}"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn robot_count(&self) -> usize {
        self.robots.initial.len()
    }

    pub fn target_count(&self) -> usize {
        self.targets.paths.len()
    }

    pub fn sigma(&self) -> f64 {
        self.comm.sigma.unwrap_or_else(|| default_sigma(self.comm.radius))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.robot_count();
        let m = self.target_count();
        if n == 0 {
            return invalid("at least one robot is required");
        }
        positive("dt", self.dt)?;
        positive("comm.radius", self.comm.radius)?;
        positive("comm.sigma", self.sigma())?;
        positive("control.d_max", self.control.d_max)?;
        positive("control.d_min", self.control.d_min)?;
        if self.control.d_min >= self.comm.radius {
            return invalid("control.d_min must be below the communication radius");
        }
        positive("planner.q1", self.planner.q1)?;
        positive("planner.q2", self.planner.q2)?;
        positive("planner.rho2", self.planner.rho2)?;
        positive("planner.fd_step", self.planner.fd_step)?;
        positive("planner.trace_cap", self.planner.trace_cap)?;
        if !(0.0..1.0).contains(&self.planner.damping) {
            return invalid("planner.damping must be in [0, 1)");
        }
        for r in self.planner.rho1.expand(m)? {
            positive("planner.rho1", r)?;
        }
        if self.planner.max_rounds == 0 {
            return invalid("planner.max_rounds must be at least 1");
        }
        if self.spectral.power_rounds == 0 || self.spectral.settle_rounds == 0 {
            return invalid("spectral power_rounds and settle_rounds must be at least 1");
        }
        positive("estimation.initial_variance", self.estimation.initial_variance)?;
        positive("estimation.consensus_tol", self.estimation.consensus_tol)?;
        if !(self.risk.failure_gain >= 0.0) {
            return invalid("risk.failure_gain must be non-negative");
        }
        if self.risk.shapes.len() != 1 && self.risk.shapes.len() != m {
            return invalid(format!("risk.shapes needs 1 or {m} matrices"));
        }
        if let Some(s) = &self.robots.sensors {
            if s.len() != n {
                return invalid(format!("robots.sensors needs {n} entries"));
            }
            if s.iter().flatten().any(|&k| k >= self.sensors.kinds.len()) {
                return invalid("robots.sensors refers to an unknown sensor kind");
            }
        }
        for f in &self.scripted_failures {
            if f.robot >= n || f.sensor >= self.sensors.kinds.len() {
                return invalid(format!("scripted failure {f:?} is out of range"));
            }
        }
        if self.sweep_eta.iter().any(|e| !(*e >= 0.0)) {
            return invalid("sweep_eta values must be non-negative");
        }
        // building the world objects runs their own checks
        self.ensemble()?;
        self.risk_field()?;
        self.catalog()?;
        Ok(())
    }

    pub fn ensemble(&self) -> Result<TargetEnsemble, ConfigError> {
        let paths = self.targets.paths.clone();
        let n = crate::world::DIM * paths.len();
        Ok(match &self.targets.dynamics {
            Some(d) => TargetEnsemble::new(paths, matrix(&d.a, n, "a")?, matrix(&d.b, n, "b")?, matrix(&d.q, n, "q")?, self.dt)?,
            None => {
                if !(self.targets.process_noise >= 0.0) {
                    return invalid("targets.process_noise must be non-negative");
                }
                TargetEnsemble::circles(paths, self.targets.process_noise, self.dt)?
            }
        })
    }

    pub fn risk_field(&self) -> Result<RiskField, ConfigError> {
        let m = self.target_count();
        let shapes: Vec<Mat2> = (0..m)
            .map(|j| {
                let s = self.risk.shapes[j.min(self.risk.shapes.len() - 1)];
                Mat2::new(s[0][0], s[0][1], s[1][0], s[1][1])
            })
            .collect();
        Ok(RiskField::new(self.risk.peaks.expand(m)?, shapes, self.risk.risk_exponent_uses_inverse)?)
    }

    pub fn catalog(&self) -> Result<SensorCatalog, ConfigError> {
        Ok(SensorCatalog::new(self.sensors.kinds.clone(), self.sensors.noise_free)?)
    }

    pub fn initial_positions(&self) -> Vec<Vec2> {
        self.robots.initial.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }

    pub fn planner_config(&self) -> Result<PlannerConfig, ConfigError> {
        let p = &self.planner;
        let mut cfg = PlannerConfig::new(p.q1, p.q2, p.rho1.expand(self.target_count())?, p.rho2, self.control.d_max);
        cfg.risk_aware = p.risk_aware;
        cfg.fd_step = p.fd_step;
        cfg.max_iters = p.max_iters;
        cfg.random_restarts = p.random_restarts;
        cfg.trace_cap = p.trace_cap;
        cfg.damping = p.damping;
        cfg.tol = p.tol;
        cfg.max_rounds = p.max_rounds;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "steps": 3,
        "robots": {"initial": [[0, 0], [3, 0]]},
        "targets": {"paths": [{"center": [5, 5], "radius": 4, "rate": 0.5, "phase": 0}]},
        "risk": {"peaks": 1.0, "shapes": [[[1, 0], [0, 1]]]},
        "comm": {"radius": 10},
        "planner": {"q1": 1, "q2": 10, "rho1": 0.01, "rho2": 0.33}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.dt, 0.1);
        assert_eq!(c.control, ControlConfig { d_max: 1.0, d_min: 1.0, epsilon: 0.25 });
        assert_eq!(c.targets.process_noise, 1e-4);
        assert_eq!(c.risk.failure_gain, 0.5);
        assert!(!c.risk.risk_exponent_uses_inverse);
        assert_eq!(c.mode, Mode::Decentralized);
        assert!((c.sigma() - default_sigma(10.0)).abs() < 1e-12);
        assert_eq!(c.planner_config().unwrap().rho1, vec![0.01]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replacen("\"steps\": 3,", "\"steps\": 3, \"colour\": 1,", 1);
        assert!(matches!(ScenarioConfig::from_json(&text), Err(ConfigError::Parse(_))));
        let nested = MINIMAL.replacen("\"radius\": 10", "\"radius\": 10, \"range\": 3", 1);
        assert!(matches!(ScenarioConfig::from_json(&nested), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn bad_values_are_rejected() {
        let shape = MINIMAL.replacen("[[1, 0], [0, 1]]", "[[1, 2], [2, 1]]", 1);
        assert!(matches!(ScenarioConfig::from_json(&shape), Err(ConfigError::World(_))));
        let sigma = MINIMAL.replacen("\"radius\": 10", "\"radius\": 10, \"sigma\": -1", 1);
        assert!(matches!(ScenarioConfig::from_json(&sigma), Err(ConfigError::Invalid(_))));
        let rho = MINIMAL.replacen("\"rho1\": 0.01", "\"rho1\": [0.01, 0.02]", 1);
        assert!(matches!(ScenarioConfig::from_json(&rho), Err(ConfigError::Invalid(_))));
    }
}
