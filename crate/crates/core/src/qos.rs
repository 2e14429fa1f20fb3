//! QoS groups, frame geometry and the access matrix.
//!
//! Indices are zero-based throughout: group `i` and subframe `s` in code
//! correspond to group `i + 1` and subframe `s + 1` in the usual notation.
//! Group `i` has its deadline at the end of subframe `i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ALPHA_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario has no groups")]
    NoGroups,
    #[error("num_devices and num_slots must be positive")]
    EmptyFrame,
    #[error("deadlines must be strictly increasing (group {group}: {prev} then {next})")]
    NonIncreasingDeadlines { group: usize, prev: usize, next: usize },
    #[error("group fractions sum to {sum}, expected 1")]
    AlphaSumMismatch { sum: f64 },
    #[error("subframe {subframe} would contain no slots")]
    EmptySubframe { subframe: usize },
    #[error("last deadline {deadline} must equal num_slots {num_slots}")]
    LastDeadlineMismatch { deadline: usize, num_slots: usize },
    #[error("group {group}: alpha {alpha} outside (0, 1]")]
    InvalidAlpha { group: usize, alpha: f64 },
    #[error("group {group}: target error {target} outside (0, 1]")]
    InvalidTarget { group: usize, target: f64 },
    #[error("feedback loss probability {0} outside [0, 1)")]
    InvalidFeedbackLoss(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("access matrix must be {expected}x{expected}, got {rows} rows")]
    Shape { expected: usize, rows: usize },
    #[error("entry g[{subframe}][{group}] = {value} is negative or not finite")]
    InvalidEntry { subframe: usize, group: usize, value: f64 },
    #[error("group {group} transmits in subframe {subframe}, after its deadline")]
    PastDeadline { subframe: usize, group: usize },
    #[error("group {group} transmits in subframe {subframe}, but ACK-Group needs a diagonal matrix")]
    NonDiagonal { subframe: usize, group: usize },
    #[error("g = {g} exceeds the {residual} unresolved devices of group {group} in subframe {subframe}")]
    ProbabilityExceedsOne { subframe: usize, group: usize, g: f64, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AckScheme {
    /// All groups share every subframe; resolved devices are acknowledged
    /// at the end of each subframe.
    AckAll,
    /// Group `i` only transmits in subframe `i`.
    AckGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyMode {
    /// Devices stop transmitting once their deadline subframe ends.
    Strict,
    /// Unresolved devices keep transmitting past their deadline.
    Flexible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub alpha: f64,
    pub deadline_slots: usize,
    pub target_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub num_devices: usize,
    pub num_slots: usize,
    pub groups: Vec<GroupSpec>,
    pub scheme: AckScheme,
    pub latency_mode: LatencyMode,
    pub feedback_loss_prob: f64,
}

impl Scenario {
    /// Scenario with `alpha` fractions and cumulative deadline fractions
    /// `beta` (last entry 1). Deadlines are rounded to whole slots.
    pub fn from_fractions(
        num_devices: usize,
        num_slots: usize,
        alpha: &[f64],
        beta: &[f64],
        targets: &[f64],
        scheme: AckScheme,
    ) -> Scenario {
        let groups = alpha
            .iter()
            .zip(beta)
            .zip(targets)
            .map(|((&alpha, &beta), &target_error)| GroupSpec {
                alpha,
                deadline_slots: (beta * num_slots as f64).round() as usize,
                target_error,
            })
            .collect();
        Scenario {
            num_devices,
            num_slots,
            groups,
            scheme,
            latency_mode: LatencyMode::Strict,
            feedback_loss_prob: 0.0,
        }
    }

    /// One group, one subframe.
    pub fn single_group(num_devices: usize, num_slots: usize, target_error: f64) -> Scenario {
        Scenario::from_fractions(num_devices, num_slots, &[1.0], &[1.0], &[target_error], AckScheme::AckAll)
    }
}

/// A scenario that passed [`validate_scenario`], with derived geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScenario {
    scenario: Scenario,
    /// ΔN_s, slots per subframe.
    pub subframe_slots: Vec<usize>,
    /// ΔN_s / N.
    pub subframe_fraction: Vec<f64>,
    /// N_s / N.
    pub cumulative_fraction: Vec<f64>,
}

pub fn validate_scenario(scn: &Scenario) -> Result<ValidatedScenario, ScenarioError> {
    if scn.groups.is_empty() {
        return Err(ScenarioError::NoGroups);
    }
    if scn.num_devices == 0 || scn.num_slots == 0 {
        return Err(ScenarioError::EmptyFrame);
    }
    if !(0.0..1.0).contains(&scn.feedback_loss_prob) {
        return Err(ScenarioError::InvalidFeedbackLoss(scn.feedback_loss_prob));
    }
    for (i, g) in scn.groups.iter().enumerate() {
        if !(g.alpha > 0.0 && g.alpha <= 1.0) {
            return Err(ScenarioError::InvalidAlpha { group: i, alpha: g.alpha });
        }
        if !(g.target_error > 0.0 && g.target_error <= 1.0) {
            return Err(ScenarioError::InvalidTarget { group: i, target: g.target_error });
        }
    }
    for (i, w) in scn.groups.windows(2).enumerate() {
        if w[1].deadline_slots <= w[0].deadline_slots {
            return Err(ScenarioError::NonIncreasingDeadlines {
                group: i + 1,
                prev: w[0].deadline_slots,
                next: w[1].deadline_slots,
            });
        }
    }
    let sum: f64 = scn.groups.iter().map(|g| g.alpha).sum();
    if (sum - 1.0).abs() > ALPHA_SUM_TOL {
        return Err(ScenarioError::AlphaSumMismatch { sum });
    }
    if scn.groups[0].deadline_slots == 0 {
        return Err(ScenarioError::EmptySubframe { subframe: 0 });
    }
    let last = scn.groups.last().unwrap().deadline_slots;
    if last != scn.num_slots {
        return Err(ScenarioError::LastDeadlineMismatch { deadline: last, num_slots: scn.num_slots });
    }

    let n = scn.num_slots as f64;
    let mut prev = 0;
    let mut subframe_slots = Vec::with_capacity(scn.groups.len());
    for g in &scn.groups {
        subframe_slots.push(g.deadline_slots - prev);
        prev = g.deadline_slots;
    }
    Ok(ValidatedScenario {
        scenario: scn.clone(),
        subframe_fraction: subframe_slots.iter().map(|&d| d as f64 / n).collect(),
        cumulative_fraction: scn.groups.iter().map(|g| g.deadline_slots as f64 / n).collect(),
        subframe_slots,
    })
}

impl ValidatedScenario {
    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn num_groups(&self) -> usize {
        self.scenario.groups.len()
    }

    pub fn num_devices(&self) -> usize {
        self.scenario.num_devices
    }

    pub fn num_slots(&self) -> usize {
        self.scenario.num_slots
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.scenario.groups.iter().map(|g| g.alpha).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.scenario.groups.iter().map(|g| g.target_error).collect()
    }

    pub fn scheme(&self) -> AckScheme {
        self.scenario.scheme
    }

    pub fn latency_mode(&self) -> LatencyMode {
        self.scenario.latency_mode
    }

    /// N / K.
    pub fn slots_per_device(&self) -> f64 {
        self.scenario.num_slots as f64 / self.scenario.num_devices as f64
    }

    /// Integer group sizes summing to K (largest-remainder rounding of α_i K).
    pub fn group_sizes(&self) -> Vec<usize> {
        let k = self.scenario.num_devices;
        let exact: Vec<f64> = self.scenario.groups.iter().map(|g| g.alpha * k as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut left = k.saturating_sub(sizes.iter().sum());
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }

    /// Copy of the scenario with different subframe lengths (same total).
    pub fn with_subframe_slots(&self, slots: &[usize]) -> Result<ValidatedScenario, ScenarioError> {
        let mut scn = self.scenario.clone();
        let mut acc = 0;
        for (g, &d) in scn.groups.iter_mut().zip(slots) {
            acc += d;
            g.deadline_slots = acc;
        }
        validate_scenario(&scn)
    }

    /// Copy with a different device count (load sweeps).
    pub fn with_num_devices(&self, num_devices: usize) -> Result<ValidatedScenario, ScenarioError> {
        let mut scn = self.scenario.clone();
        scn.num_devices = num_devices;
        validate_scenario(&scn)
    }

    pub fn with_scheme(&self, scheme: AckScheme) -> ValidatedScenario {
        let mut out = self.clone();
        out.scenario.scheme = scheme;
        out
    }

    pub fn with_targets(&self, targets: &[f64]) -> Result<ValidatedScenario, ScenarioError> {
        let mut scn = self.scenario.clone();
        for (g, &t) in scn.groups.iter_mut().zip(targets) {
            g.target_error = t;
        }
        validate_scenario(&scn)
    }

    /// Whether the scheme and latency mode allow group `group` to transmit in
    /// subframe `subframe`.
    pub fn may_transmit(&self, subframe: usize, group: usize) -> bool {
        match (self.scheme(), self.latency_mode()) {
            (AckScheme::AckGroup, _) => subframe == group,
            (AckScheme::AckAll, LatencyMode::Strict) => subframe <= group,
            (AckScheme::AckAll, LatencyMode::Flexible) => true,
        }
    }
}

/// The r×r matrix of mean slot occupancies. Row `s` is subframe `s`,
/// column `i` is group `i`: `get(s, i)` is g_i^(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccessMatrix {
    pub fn zeros(r: usize) -> AccessMatrix {
        AccessMatrix { rows: vec![vec![0.0; r]; r] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<AccessMatrix, MatrixError> {
        let r = rows.len();
        for (s, row) in rows.iter().enumerate() {
            if row.len() != r {
                return Err(MatrixError::Shape { expected: r, rows: row.len() });
            }
            for (i, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(MatrixError::InvalidEntry { subframe: s, group: i, value: v });
                }
            }
        }
        Ok(AccessMatrix { rows })
    }

    pub fn diagonal(values: &[f64]) -> AccessMatrix {
        let mut m = AccessMatrix::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.rows[i][i] = v;
        }
        m
    }

    pub fn single(g: f64) -> AccessMatrix {
        AccessMatrix { rows: vec![vec![g]] }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, subframe: usize, group: usize) -> f64 {
        self.rows[subframe][group]
    }

    pub fn set(&mut self, subframe: usize, group: usize, value: f64) {
        self.rows[subframe][group] = value;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Total mean occupancy of a subframe-`s` slot.
    pub fn subframe_load(&self, subframe: usize) -> f64 {
        self.rows[subframe].iter().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.off_diagonal().is_none()
    }

    fn off_diagonal(&self) -> Option<(usize, usize)> {
        for (s, row) in self.rows.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if s != i && v != 0.0 {
                    return Some((s, i));
                }
            }
        }
        None
    }

    /// Checks shape and the zero pattern implied by the scenario.
    pub fn check_pattern(&self, scn: &ValidatedScenario) -> Result<(), MatrixError> {
        let r = scn.num_groups();
        if self.rows.len() != r {
            return Err(MatrixError::Shape { expected: r, rows: self.rows.len() });
        }
        if scn.scheme() == AckScheme::AckGroup {
            if let Some((subframe, group)) = self.off_diagonal() {
                return Err(MatrixError::NonDiagonal { subframe, group });
            }
        }
        if scn.latency_mode() == LatencyMode::Strict {
            for s in 0..r {
                for i in 0..s {
                    if self.rows[s][i] != 0.0 {
                        return Err(MatrixError::PastDeadline { subframe: s, group: i });
                    }
                }
            }
        }
        Ok(())
    }

    /// Index pairs `(subframe, group)` that are free design variables.
    pub fn free_entries(scn: &ValidatedScenario) -> Vec<(usize, usize)> {
        let r = scn.num_groups();
        let mut out = Vec::new();
        for s in 0..r {
            for i in 0..r {
                if scn.may_transmit(s, i) {
                    out.push((s, i));
                }
            }
        }
        out
    }

    pub fn from_free_entries(r: usize, entries: &[(usize, usize)], values: &[f64]) -> AccessMatrix {
        let mut m = AccessMatrix::zeros(r);
        for (&(s, i), &v) in entries.iter().zip(values) {
            m.rows[s][i] = v;
        }
        m
    }
}

/// |C_{i,s}^{(s)}|: unresolved group-`i` devices entering subframe `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSizes {
    sizes: Vec<Vec<f64>>,
}

impl ResidualSizes {
    /// `sizes[s][i]`.
    pub fn new(sizes: Vec<Vec<f64>>) -> ResidualSizes {
        ResidualSizes { sizes }
    }

    pub fn get(&self, subframe: usize, group: usize) -> f64 {
        self.sizes[subframe][group]
    }
}

/// p_i^(s) = g_i^(s) / |C_{i,s}^(s)|, laid out like the access matrix.
pub fn access_probabilities(g: &AccessMatrix, residuals: &ResidualSizes) -> Result<Vec<Vec<f64>>, MatrixError> {
    let r = g.size();
    let mut out = vec![vec![0.0; r]; r];
    for s in 0..r {
        for i in 0..r {
            out[s][i] = access_probability(g.get(s, i), residuals.get(s, i))
                .map_err(|(g, residual)| MatrixError::ProbabilityExceedsOne { subframe: s, group: i, g, residual })?;
        }
    }
    Ok(out)
}

/// Single-entry form of [`access_probabilities`]; the error carries `(g, residual)`.
pub fn access_probability(g: f64, residual: f64) -> Result<f64, (f64, f64)> {
    if g == 0.0 {
        return Ok(0.0);
    }
    if residual <= 0.0 || g > residual {
        return Err((g, residual));
    }
    Ok(g / residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups(deadlines: [usize; 2], alpha: [f64; 2]) -> Scenario {
        Scenario {
            num_devices: 500,
            num_slots: 1000,
            groups: vec![
                GroupSpec { alpha: alpha[0], deadline_slots: deadlines[0], target_error: 1e-3 },
                GroupSpec { alpha: alpha[1], deadline_slots: deadlines[1], target_error: 1e-3 },
            ],
            scheme: AckScheme::AckAll,
            latency_mode: LatencyMode::Strict,
            feedback_loss_prob: 0.0,
        }
    }

    #[test]
    fn derives_subframe_geometry() {
        let v = validate_scenario(&two_groups([700, 1000], [0.5, 0.5])).unwrap();
        assert_eq!(v.subframe_slots, vec![700, 300]);
        assert_eq!(v.subframe_fraction, vec![0.7, 0.3]);
        assert_eq!(v.cumulative_fraction, vec![0.7, 1.0]);
    }

    #[test]
    fn rejects_bad_scenarios() {
        assert!(matches!(
            validate_scenario(&two_groups([500, 400], [0.5, 0.5])),
            Err(ScenarioError::NonIncreasingDeadlines { .. })
        ));
        assert!(matches!(
            validate_scenario(&two_groups([700, 1000], [0.6, 0.6])),
            Err(ScenarioError::AlphaSumMismatch { .. })
        ));
        assert!(matches!(
            validate_scenario(&two_groups([0, 1000], [0.5, 0.5])),
            Err(ScenarioError::EmptySubframe { subframe: 0 })
        ));
        assert!(matches!(
            validate_scenario(&two_groups([700, 900], [0.5, 0.5])),
            Err(ScenarioError::LastDeadlineMismatch { .. })
        ));
    }

    #[test]
    fn validation_is_idempotent() {
        let v = validate_scenario(&two_groups([700, 1000], [0.3, 0.7])).unwrap();
        assert_eq!(validate_scenario(v.scenario()).unwrap(), v);
    }

    #[test]
    fn access_probability_cases() {
        assert_eq!(access_probability(3.0, 1000.0), Ok(0.003));
        assert_eq!(access_probability(0.0, 0.0), Ok(0.0));
        assert_eq!(access_probability(0.0, 17.0), Ok(0.0));
        assert!(access_probability(5.0, 4.0).is_err());
        let g = AccessMatrix::from_rows(vec![vec![5.0]]).unwrap();
        let res = ResidualSizes::new(vec![vec![4.0]]);
        assert!(matches!(access_probabilities(&g, &res), Err(MatrixError::ProbabilityExceedsOne { .. })));
    }

    #[test]
    fn group_sizes_sum_to_k() {
        let mut scn = Scenario::from_fractions(1000, 300, &[1.0 / 3.0; 3], &[0.2, 0.5, 1.0], &[1e-3; 3], AckScheme::AckAll);
        scn.num_devices = 1000;
        let v = validate_scenario(&scn).unwrap();
        let sizes = v.group_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 1000);
        assert!(sizes.iter().all(|&s| s == 333 || s == 334));
    }

    #[test]
    fn strict_pattern_is_upper_triangular() {
        let v = validate_scenario(&two_groups([700, 1000], [0.5, 0.5])).unwrap();
        let ok = AccessMatrix::from_rows(vec![vec![2.0, 1.0], vec![0.0, 3.0]]).unwrap();
        assert!(ok.check_pattern(&v).is_ok());
        let bad = AccessMatrix::from_rows(vec![vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap();
        assert!(matches!(bad.check_pattern(&v), Err(MatrixError::PastDeadline { subframe: 1, group: 0 })));
        assert_eq!(AccessMatrix::free_entries(&v), vec![(0, 0), (0, 1), (1, 1)]);
        let grp = v.with_scheme(AckScheme::AckGroup);
        assert!(matches!(ok.check_pattern(&grp), Err(MatrixError::NonDiagonal { .. })));
    }
}
