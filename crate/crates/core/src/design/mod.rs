//! Search for the access matrix G under per-group error targets.
//!
//! The free variables are the entries a group may use under the scenario's
//! scheme and latency mode, each boxed to `[0, g_max]`.

mod de;

pub use de::{differential_evolution, DeOutcome, DeParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{max_load_single, BoundError, LoadSearch};
use crate::evolution::{avg_transmissions, finite_size_error, EvolveOptions};
use crate::qos::{AccessMatrix, AckScheme, Scenario, ScenarioError, ValidatedScenario};
use crate::qos::validate_scenario;

/// Weight on the summed target violations in the energy objective.
pub const PENALTY_WEIGHT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("invalid design problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("no access matrix meets the targets (best max error ratio {max_ratio:.3})")]
    Infeasible { max_ratio: f64, result: Box<DesignResult> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MinSumTransmissions,
    MinMaxErrorRatio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    /// Targets ε*_i are the scenario's group targets.
    pub scenario: ValidatedScenario,
    pub objective: Objective,
    pub g_max: f64,
    /// c in σ = c √(g / ΔN_s); 0 disables the finite-size correction.
    pub finite_size_c: f64,
    pub de: DeParams,
    pub evolve: EvolveOptions,
}

impl DesignProblem {
    pub fn new(scenario: ValidatedScenario, objective: Objective) -> DesignProblem {
        DesignProblem { scenario, objective, g_max: 4.0, finite_size_c: 10.0, de: DeParams::default(), evolve: EvolveOptions::default() }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        self.de.validate().map_err(DesignError::InvalidProblem)?;
        if !(self.g_max >= 0.0 && self.g_max.is_finite()) {
            return Err(DesignError::InvalidProblem(format!("g_max {} must be finite and non-negative", self.g_max)));
        }
        if !(self.finite_size_c >= 0.0 && self.finite_size_c.is_finite()) {
            return Err(DesignError::InvalidProblem(format!("finite-size constant {} must be non-negative", self.finite_size_c)));
        }
        Ok(())
    }

    fn free_entries(&self) -> Vec<(usize, usize)> {
        AccessMatrix::free_entries(&self.scenario)
    }

    fn matrix(&self, x: &[f64]) -> AccessMatrix {
        AccessMatrix::from_free_entries(self.scenario.num_groups(), &self.free_entries(), x)
    }

    /// Bound on Σ M_i over the search box; any feasible point scores below it.
    fn max_total_transmissions(&self) -> f64 {
        let full = self.matrix(&vec![self.g_max; self.free_entries().len()]);
        avg_transmissions(&self.scenario, &full).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub g: AccessMatrix,
    /// ε_i^(i) from the analyzer at G.
    pub raw_error: Vec<f64>,
    /// Finite-size corrected ε_i^(i).
    pub corrected_error: Vec<f64>,
    pub transmissions: Vec<f64>,
    pub targets: Vec<f64>,
    pub feasible: bool,
    pub generations_used: usize,
}

impl DesignResult {
    pub fn max_error_ratio(&self) -> f64 {
        self.corrected_error.iter().zip(&self.targets).map(|(e, t)| e / t).fold(0.0, f64::max)
    }

    pub fn total_transmissions(&self) -> f64 {
        self.transmissions.iter().sum()
    }

    /// `Err(Infeasible)` unless every corrected error meets its target.
    pub fn into_feasible(self) -> Result<DesignResult, DesignError> {
        if self.feasible {
            Ok(self)
        } else {
            Err(DesignError::Infeasible { max_ratio: self.max_error_ratio(), result: Box::new(self) })
        }
    }

    /// Key/value report, one `key = value` per line.
    pub fn report(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ");
        format!(
            "feasible = {}\ngenerations_used = {}\ntargets = [{}]\nraw_error = [{}]\ncorrected_error = [{}]\ntransmissions = [{}]\ntotal_transmissions = {:.6}\nmax_error_ratio = {:.6}\n",
            self.feasible,
            self.generations_used,
            list(&self.targets),
            list(&self.raw_error),
            list(&self.corrected_error),
            list(&self.transmissions),
            self.total_transmissions(),
            self.max_error_ratio()
        )
    }
}

/// Corrected deadline errors at `x`, or `None` if the analyzer rejects the
/// matrix.
fn corrected(problem: &DesignProblem, x: &[f64]) -> Option<Vec<f64>> {
    finite_size_error(&problem.scenario, &problem.matrix(x), problem.finite_size_c, &problem.evolve)
        .ok()
        .map(|e| e.corrected)
}

fn finish(problem: &DesignProblem, x: &[f64], generations_used: usize) -> DesignResult {
    let g = problem.matrix(x);
    let targets = problem.scenario.targets();
    let (raw_error, corrected_error) = match finite_size_error(&problem.scenario, &g, problem.finite_size_c, &problem.evolve) {
        Ok(e) => (e.raw, e.corrected),
        Err(_) => (vec![1.0; targets.len()], vec![1.0; targets.len()]),
    };
    let feasible = corrected_error.iter().zip(&targets).all(|(e, t)| e <= t);
    DesignResult { transmissions: avg_transmissions(&problem.scenario, &g), g, raw_error, corrected_error, targets, feasible, generations_used }
}

fn bounds(problem: &DesignProblem) -> Vec<(f64, f64)> {
    vec![(0.0, problem.g_max); problem.free_entries().len()]
}

/// Minimizes Σ M_i subject to corrected ε_i^(i) ≤ ε*_i, using the penalty
/// Σ M_i + w Σ max(0, ε̂_i − ε*_i) plus a constant offset on every
/// infeasible point so that feasible points always rank first.
pub fn design_energy_min(problem: &DesignProblem) -> Result<DesignResult, DesignError> {
    problem.validate()?;
    let targets = problem.scenario.targets();
    let offset = problem.max_total_transmissions() + 1.0;
    let objective = |x: &[f64]| -> f64 {
        let g = problem.matrix(x);
        let m: f64 = avg_transmissions(&problem.scenario, &g).iter().sum();
        match corrected(problem, x) {
            Some(eps) => {
                let violation: f64 = eps.iter().zip(&targets).map(|(e, t)| (e - t).max(0.0)).sum();
                if violation > 0.0 {
                    m + offset + PENALTY_WEIGHT * violation
                } else {
                    m
                }
            }
            None => f64::INFINITY,
        }
    };
    let out = differential_evolution(objective, &bounds(problem), &problem.de);
    Ok(finish(problem, &out.best, out.generations))
}

/// One min-max search: minimizes the largest error ratio ε̂_j / ε*_j over
/// the groups in `free`, subject to ratio_j ≤ caps[j] for every capped
/// group. Violations are penalized above any attainable ratio.
fn min_max_stage(problem: &DesignProblem, free: &[usize], caps: &[Option<f64>]) -> DeOutcome {
    let targets = problem.scenario.targets();
    let offset = targets.iter().map(|t| 1.0 / t).fold(0.0, f64::max) + 1.0;
    let objective = |x: &[f64]| -> f64 {
        let Some(eps) = corrected(problem, x) else { return f64::INFINITY };
        let ratio = |j: usize| eps[j] / targets[j];
        let worst = free.iter().map(|&j| ratio(j)).fold(0.0, f64::max);
        let violation: f64 = caps.iter().enumerate().filter_map(|(j, c)| c.map(|c| (ratio(j) - c).max(0.0))).sum();
        if violation > 0.0 {
            worst + offset + PENALTY_WEIGHT * violation
        } else {
            worst
        }
    };
    differential_evolution(objective, &bounds(problem), &problem.de)
}

/// Minimizes max_i ε̂_i / ε*_i; the first stage of [`design_reliable`].
pub fn design_min_max_ratio(problem: &DesignProblem) -> Result<DesignResult, DesignError> {
    problem.validate()?;
    let r = problem.scenario.num_groups();
    let all: Vec<usize> = (0..r).collect();
    let out = min_max_stage(problem, &all, &vec![None; r]);
    Ok(finish(problem, &out.best, out.generations))
}

/// Relative slack granted to a group once its ratio has been fixed.
pub const RATIO_SLACK: f64 = 0.01;

/// Reliability design by lexicographic min-max. The worst error ratio t*
/// is minimized first; the group attaining it is then capped at
/// t*(1 + slack) and the worst ratio among the remaining groups is
/// minimized, and so on until every group is capped. Groups that do not
/// bind at the first stage are thereby driven to their own best error
/// instead of being left wherever the first search stopped.
pub fn design_reliable(problem: &DesignProblem) -> Result<DesignResult, DesignError> {
    problem.validate()?;
    let r = problem.scenario.num_groups();
    let targets = problem.scenario.targets();
    let mut free: Vec<usize> = (0..r).collect();
    let mut caps = vec![None; r];
    let mut best = Vec::new();
    let mut generations = 0;
    while !free.is_empty() {
        let out = min_max_stage(problem, &free, &caps);
        generations += out.generations;
        let Some(eps) = corrected(problem, &out.best) else {
            best = out.best;
            break;
        };
        let ratio = |j: usize| eps[j] / targets[j];
        let worst = free.iter().copied().fold(free[0], |a, j| if ratio(j) > ratio(a) { j } else { a });
        caps[worst] = Some(ratio(worst) * (1.0 + RATIO_SLACK));
        free.retain(|&j| j != worst);
        best = out.best;
    }
    Ok(finish(problem, &best, generations))
}

/// Runs the search selected by `problem.objective`.
pub fn design(problem: &DesignProblem) -> Result<DesignResult, DesignError> {
    match problem.objective {
        Objective::MinSumTransmissions => design_energy_min(problem),
        Objective::MinMaxErrorRatio => design_reliable(problem),
    }
}

/// ACK-Group subframe lengths. Subframe s < r keeps at most
/// ⌈α_s K / L*(ε*_s)⌉ slots and never ends after its original deadline; the
/// slots freed are moved to the last subframe.
pub fn shrink_subframes(scn: &ValidatedScenario, search: &LoadSearch) -> Result<Vec<usize>, DesignError> {
    if scn.scheme() != AckScheme::AckGroup {
        return Err(DesignError::InvalidProblem("subframe shrinking applies to the ACK-Group scheme".into()));
    }
    let r = scn.num_groups();
    let alpha = scn.alpha();
    let targets = scn.targets();
    let k = scn.num_devices() as f64;
    let deadlines: Vec<usize> = scn.scenario().groups.iter().map(|g| g.deadline_slots).collect();
    let mut out = Vec::with_capacity(r);
    let mut start = 0;
    for s in 0..r - 1 {
        let bound = max_load_single(targets[s], search)?;
        let need = if bound.saturated { 1 } else { (alpha[s] * k / bound.load).ceil() as usize };
        let len = need.max(1).min(deadlines[s] - start);
        out.push(len);
        start += len;
    }
    out.push(scn.num_slots() - start);
    Ok(out)
}

/// Inputs of [`system_capacity`].
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityQuery {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub targets: Vec<f64>,
    pub num_slots: usize,
    pub scheme: AckScheme,
    pub finite_size_c: f64,
    pub g_max: f64,
    /// Parameters of the final verification search.
    pub de: DeParams,
    /// Generations used at each bisection step.
    pub search_generations: usize,
    pub load_max: f64,
    pub resolution: f64,
}

impl CapacityQuery {
    pub fn new(alpha: &[f64], beta: &[f64], targets: &[f64], num_slots: usize) -> CapacityQuery {
        CapacityQuery {
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            targets: targets.to_vec(),
            num_slots,
            scheme: AckScheme::AckAll,
            finite_size_c: 0.0,
            g_max: 4.0,
            de: DeParams::default(),
            search_generations: 50,
            load_max: 4.0,
            resolution: 1e-2,
        }
    }

    fn problem(&self, load: f64, generations: usize) -> Result<DesignProblem, DesignError> {
        let k = ((load * self.num_slots as f64).round() as usize).max(1);
        let scn = validate_scenario(&Scenario::from_fractions(k, self.num_slots, &self.alpha, &self.beta, &self.targets, self.scheme))?;
        let mut p = DesignProblem::new(scn, Objective::MinMaxErrorRatio);
        p.finite_size_c = self.finite_size_c;
        p.g_max = self.g_max;
        p.de = DeParams { max_generations: generations, ..self.de };
        Ok(p)
    }

    fn feasible(&self, load: f64, generations: usize) -> Result<bool, DesignError> {
        Ok(design_min_max_ratio(&self.problem(load, generations)?)?.feasible)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    /// Largest load K/N found feasible.
    pub load: f64,
    /// Feasible even at `load_max`.
    pub saturated: bool,
}

/// L*_r: bisection on K/N, each step asking whether a reduced-budget
/// min-max design meets every target; the final load is re-checked with
/// the full budget and lowered by `resolution` until it passes.
pub fn system_capacity(query: &CapacityQuery) -> Result<CapacityResult, DesignError> {
    if query.load_max <= 0.0 || query.resolution <= 0.0 {
        return Err(DesignError::InvalidProblem("load_max and resolution must be positive".into()));
    }
    let quick = query.search_generations;
    if query.feasible(query.load_max, quick)? {
        return Ok(CapacityResult { load: query.load_max, saturated: true });
    }
    let (mut lo, mut hi) = (0.0, query.load_max);
    while hi - lo > query.resolution {
        let mid = 0.5 * (lo + hi);
        if query.feasible(mid, quick)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let full = query.de.max_generations;
    while lo > 0.0 && !query.feasible(lo, full)? {
        lo = (lo - query.resolution).max(0.0);
    }
    Ok(CapacityResult { load: lo, saturated: false })
}
