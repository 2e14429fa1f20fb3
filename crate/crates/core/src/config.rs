//! TOML run configuration shared by every front end.
//!
//! Scenario fields sit at the top level with one `[[group]]` table per QoS
//! group; each operation has its own optional section. Unknown keys are
//! rejected everywhere.
//!
//! ```toml
//! num_devices = 4000
//! num_slots = 8000
//! scheme = "ack-group"          # or "ack-all"
//! latency_mode = "strict"       # or "flexible"
//! access_matrix = [[1.2, 0.0], [0.0, 1.3]]
//!
//! [[group]]
//! alpha = 0.5
//! deadline_slots = 5600
//! target_error = 1e-3
//!
//! [[group]]
//! alpha = 0.5
//! deadline_slots = 8000
//! target_error = 1e-3
//!
//! [design]
//! objective = "min-sum-transmissions"
//! finite_size_c = 0.0
//! ```

use serde::Deserialize;
use thiserror::Error;

use crate::design::{CapacityQuery, DeParams, DesignProblem, Objective};
use crate::dynamics::DynamicsConfig;
use crate::evolution::EvolveOptions;
use crate::qos::{validate_scenario, AccessMatrix, AckScheme, GroupSpec, LatencyMode, MatrixError, Scenario, ScenarioError, ValidatedScenario};
use crate::sic::{AckLossMode, FrameSetup};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub num_devices: Option<usize>,
    pub num_slots: Option<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: AckScheme,
    #[serde(default = "default_latency")]
    pub latency_mode: LatencyMode,
    #[serde(default)]
    pub feedback_loss_prob: f64,
    #[serde(default, rename = "group")]
    pub groups: Vec<GroupSpec>,
    /// Row `s` is subframe `s`, column `i` group `i`.
    pub access_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    pub design: Option<DesignSection>,
    pub dynamics: Option<DynamicsConfig>,
    pub capacity: Option<CapacitySection>,
    pub sweep: Option<SweepSection>,
}

fn default_scheme() -> AckScheme {
    AckScheme::AckAll
}

fn default_latency() -> LatencyMode {
    LatencyMode::Strict
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub max_iter: usize,
    pub tol: f64,
    /// c of the finite-size average; 0 reports the plain recursion.
    pub finite_size_c: f64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        let e = EvolveOptions::default();
        AnalyzeSection { max_iter: e.max_iter, tol: e.tol, finite_size_c: 0.0 }
    }
}

impl AnalyzeSection {
    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions { tol: self.tol, max_iter: self.max_iter, require_convergence: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub ack_loss_mode: AckLossMode,
    /// Also write one row per trial.
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub objective: Objective,
    pub g_max: f64,
    pub finite_size_c: f64,
    pub max_iter: usize,
    pub de: DeParams,
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            objective: Objective::MinSumTransmissions,
            g_max: 4.0,
            finite_size_c: 10.0,
            max_iter: EvolveOptions::default().max_iter,
            de: DeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityKind {
    /// Largest K/N meeting every group target in one frame.
    Static,
    /// Largest stable arrival rate of the multi-frame dynamics.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    pub kind: CapacityKind,
    pub finite_size_c: f64,
    pub g_max: f64,
    pub load_max: f64,
    pub resolution: f64,
    pub search_generations: usize,
    pub de: DeParams,
    /// Arrival rates for the dynamic scan, ascending.
    pub lambdas: Vec<f64>,
}

impl Default for CapacitySection {
    fn default() -> Self {
        let q = CapacityQuery::new(&[1.0], &[1.0], &[0.1], 1);
        CapacitySection {
            kind: CapacityKind::Static,
            finite_size_c: q.finite_size_c,
            g_max: q.g_max,
            load_max: q.load_max,
            resolution: q.resolution,
            search_generations: q.search_generations,
            de: q.de,
            lambdas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    G,
    Load,
}

/// Single-group grid: ε over g at fixed loads, or over load at fixed g.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub over: SweepAxis,
    /// `[start, stop, step]`, inclusive of `stop`.
    pub range: [f64; 3],
    /// Fixed values of the other axis.
    pub fixed: Vec<f64>,
    #[serde(default)]
    pub finite_size_c: f64,
    /// Adds Monte-Carlo columns when the CLI is given `--trials`.
    #[serde(default)]
    pub simulate: bool,
}

impl SweepSection {
    pub fn points(&self) -> Result<Vec<f64>, ConfigError> {
        let [start, stop, step] = self.range;
        if !(step > 0.0 && start <= stop && start.is_finite() && stop.is_finite()) {
            return Err(ConfigError::Invalid(format!("sweep range {:?}", self.range)));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded so printed grid values stay short.
        Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect())
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        if let Some(s) = &cfg.sweep {
            s.points()?;
        }
        Ok(cfg)
    }

    pub fn raw_scenario(&self) -> Result<Scenario, ConfigError> {
        if self.groups.is_empty() {
            return Err(ConfigError::Missing("[[group]]"));
        }
        Ok(Scenario {
            num_devices: self.num_devices.ok_or(ConfigError::Missing("num_devices"))?,
            num_slots: self.num_slots.ok_or(ConfigError::Missing("num_slots"))?,
            groups: self.groups.clone(),
            scheme: self.scheme,
            latency_mode: self.latency_mode,
            feedback_loss_prob: self.feedback_loss_prob,
        })
    }

    pub fn scenario(&self) -> Result<ValidatedScenario, ConfigError> {
        Ok(validate_scenario(&self.raw_scenario()?)?)
    }

    /// The access matrix, checked against the scenario's allowed pattern.
    pub fn matrix(&self, scn: &ValidatedScenario) -> Result<AccessMatrix, ConfigError> {
        let rows = self.access_matrix.clone().ok_or(ConfigError::Missing("access_matrix"))?;
        let g = AccessMatrix::from_rows(rows)?;
        if g.size() != scn.num_groups() {
            return Err(MatrixError::Shape { expected: scn.num_groups(), rows: g.size() }.into());
        }
        g.check_pattern(scn)?;
        Ok(g)
    }

    pub fn frame_setup(&self) -> Result<FrameSetup, ConfigError> {
        let scn = self.scenario()?;
        let g = self.matrix(&scn)?;
        Ok(FrameSetup::new(&scn, &g)?.with_ack_loss_mode(self.simulate.ack_loss_mode))
    }

    pub fn design_problem(&self) -> Result<DesignProblem, ConfigError> {
        let d = self.design.unwrap_or_default();
        let mut p = DesignProblem::new(self.scenario()?, d.objective);
        p.g_max = d.g_max;
        p.finite_size_c = d.finite_size_c;
        p.de = d.de;
        p.evolve = EvolveOptions { max_iter: d.max_iter, ..EvolveOptions::default() };
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }

    /// Static capacity query from the group fractions, deadlines and targets.
    pub fn capacity_query(&self) -> Result<CapacityQuery, ConfigError> {
        let scn = self.scenario()?;
        let c = self.capacity.clone().unwrap_or_default();
        let mut q = CapacityQuery::new(&scn.alpha(), &scn.cumulative_fraction, &scn.targets(), scn.num_slots());
        q.scheme = scn.scheme();
        q.finite_size_c = c.finite_size_c;
        q.g_max = c.g_max;
        q.load_max = c.load_max;
        q.resolution = c.resolution;
        q.search_generations = c.search_generations;
        q.de = c.de;
        Ok(q)
    }

    pub fn dynamics_config(&self) -> Result<DynamicsConfig, ConfigError> {
        let d = self.dynamics.clone().unwrap_or_default();
        d.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AccessScheme, ResourceModel};

    const FIG3: &str = r#"
num_devices = 4000
num_slots = 8000
scheme = "ack-group"
access_matrix = [[1.2, 0.0], [0.0, 1.3]]

[[group]]
alpha = 0.5
deadline_slots = 5600
target_error = 1e-3

[[group]]
alpha = 0.5
deadline_slots = 8000
target_error = 1e-3

[design]
objective = "min-max-error-ratio"
finite_size_c = 0.0
de = { max_generations = 20, seed = 3 }
"#;

    #[test]
    fn full_scenario_round_trip() {
        let cfg = RunConfig::parse(FIG3).unwrap();
        let scn = cfg.scenario().unwrap();
        assert_eq!(scn.num_groups(), 2);
        assert_eq!(scn.subframe_slots, vec![5600, 2400]);
        assert_eq!(cfg.matrix(&scn).unwrap().get(1, 1), 1.3);
        let p = cfg.design_problem().unwrap();
        assert_eq!(p.objective, Objective::MinMaxErrorRatio);
        assert_eq!(p.finite_size_c, 0.0);
        assert_eq!(p.de.max_generations, 20);
        assert_eq!(p.de.weight, 0.5);
        assert_eq!(cfg.latency_mode, LatencyMode::Strict);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("num_device = 3"), Err(ConfigError::Parse(_))));
        let bad_group = "[[group]]\nalpha = 1.0\ndeadline_slots = 10\ntarget_error = 0.1\ncolour = 2\n";
        assert!(RunConfig::parse(bad_group).is_err());
        assert!(RunConfig::parse("[design]\nobjective = \"fastest\"").is_err());
        assert!(RunConfig::parse("[dynamics]\nlambda = 3").is_err());
    }

    #[test]
    fn missing_pieces_are_reported() {
        let cfg = RunConfig::parse("num_slots = 10").unwrap();
        assert!(matches!(cfg.scenario(), Err(ConfigError::Missing("[[group]]"))));
        let cfg = RunConfig::parse("num_slots = 10\n[[group]]\nalpha = 1.0\ndeadline_slots = 10\ntarget_error = 0.1").unwrap();
        assert!(matches!(cfg.scenario(), Err(ConfigError::Missing("num_devices"))));
    }

    #[test]
    fn matrix_must_fit_scheme() {
        let text = FIG3.replace("[[1.2, 0.0], [0.0, 1.3]]", "[[1.2, 0.4], [0.0, 1.3]]");
        let cfg = RunConfig::parse(&text).unwrap();
        let scn = cfg.scenario().unwrap();
        assert!(matches!(cfg.matrix(&scn), Err(ConfigError::Matrix(_))));
        let text = FIG3.replace("[[1.2, 0.0], [0.0, 1.3]]", "[[1.2]]");
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(cfg.matrix(&scn).is_err());
    }

    #[test]
    fn dynamics_section() {
        let cfg = RunConfig::parse(
            "[dynamics]\narrival_rate = 12.5\nresource_model = { fixed-rbs = 40 }\nscheme = { dab-fixed-rach-fraction = 0.2 }\n",
        )
        .unwrap();
        let d = cfg.dynamics_config().unwrap();
        assert_eq!(d.arrival_rate, 12.5);
        assert_eq!(d.resource_model, ResourceModel::FixedRbs(40));
        assert_eq!(d.scheme, AccessScheme::DabFixedRachFraction(0.2));
        assert_eq!(d.frames, DynamicsConfig::default().frames);
    }

    #[test]
    fn sweep_points_include_stop() {
        let cfg = RunConfig::parse("[sweep]\nover = \"g\"\nrange = [3.4, 3.6, 0.01]\nfixed = [0.8333333333]\n").unwrap();
        let pts = cfg.sweep.unwrap().points().unwrap();
        assert_eq!(pts.len(), 21);
        assert_eq!(pts[9], 3.49);
        assert_eq!(pts[20], 3.6);
        assert!(RunConfig::parse("[sweep]\nover = \"g\"\nrange = [1, 0, 0.1]\nfixed = [1]\n").is_err());
    }
}
