//! Load bounds: the single-group maximum load L*(ε), the per-group
//! feasibility conditions built on it, and the access-barring probability.

use thiserror::Error;

use crate::evolution::{single_group_error, EvolveOptions, EvolutionTrace};
use crate::qos::ValidatedScenario;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("target error {0} outside (0, 1)")]
    InvalidTarget(f64),
    #[error("feasibility is not monotone in load near {load} (refine the g grid)")]
    GridTooCoarse { load: f64 },
}

/// Optional finite-size averaging applied to every ε(g, K/N) evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSize {
    pub c: f64,
    pub num_slots: usize,
}

/// Search controls for [`max_load_single`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSearch {
    pub g_max: f64,
    pub g_step: f64,
    /// Bisection stops once the load bracket is narrower than this.
    pub load_tol: f64,
    /// Upper end of the load bracket.
    pub load_max: f64,
    pub finite_size: Option<FiniteSize>,
    pub evolve: EvolveOptions,
}

impl Default for LoadSearch {
    fn default() -> Self {
        LoadSearch {
            g_max: 4.0,
            g_step: 0.01,
            load_tol: 1e-4,
            load_max: 10.0,
            finite_size: None,
            evolve: EvolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadBound {
    /// Largest feasible K/N found.
    pub load: f64,
    /// Grid value of g attaining the smallest error at `load`.
    pub best_g: f64,
    pub error_at_load: f64,
    /// The target is met even at `load_max`; the true bound lies above it.
    pub saturated: bool,
}

impl LoadSearch {
    fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let steps = (self.g_max / self.g_step).round() as usize;
        (0..=steps).map(move |k| k as f64 * self.g_step)
    }

    /// ε(g, K/N), finite-size averaged if configured.
    pub fn error(&self, g: f64, load: f64) -> f64 {
        let eval = |g: f64| single_group_error(g, load, &self.evolve);
        match self.finite_size {
            Some(FiniteSize { c, num_slots }) if c > 0.0 && g > 0.0 => {
                let sigma = c * (g / num_slots as f64).sqrt();
                (eval((g - sigma).max(0.0)) + eval(g) + eval(g + sigma)) / 3.0
            }
            _ => eval(g),
        }
    }

    /// min over the g grid of ε(g, load), with the minimizing g.
    pub fn best_error(&self, load: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for g in self.grid() {
            let e = self.error(g, load);
            if e < best.0 {
                best = (e, g);
            }
        }
        best
    }
}

/// L*(ε): the largest load K/N at which some g in the grid reaches an
/// average error of at most `eps_target`.
pub fn max_load_single(eps_target: f64, search: &LoadSearch) -> Result<LoadBound, BoundError> {
    if !(eps_target > 0.0 && eps_target <= 1.0) {
        return Err(BoundError::InvalidTarget(eps_target));
    }
    let feasible = |load: f64| search.best_error(load).0 <= eps_target;

    if feasible(search.load_max) {
        let (e, g) = search.best_error(search.load_max);
        return Ok(LoadBound { load: search.load_max, best_g: g, error_at_load: e, saturated: true });
    }

    // Coarse ladder first: feasibility has to be a prefix of it.
    const LADDER: usize = 20;
    let ladder: Vec<f64> = (1..=LADDER).map(|k| search.load_max * k as f64 / LADDER as f64).collect();
    let pattern: Vec<bool> = ladder.iter().map(|&l| feasible(l)).collect();
    let first_bad = pattern.iter().position(|&ok| !ok).unwrap_or(LADDER);
    if let Some(k) = pattern[first_bad..].iter().position(|&ok| ok) {
        return Err(BoundError::GridTooCoarse { load: ladder[first_bad + k] });
    }

    let mut lo = if first_bad == 0 { 0.0 } else { ladder[first_bad - 1] };
    let mut hi = ladder[first_bad];
    while hi - lo > search.load_tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (e, g) = if lo > 0.0 { search.best_error(lo) } else { (0.0, search.g_max) };
    Ok(LoadBound { load: lo, best_g: g, error_at_load: e, saturated: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeasibility {
    /// ε_i^(i-1) α_i / β_i · K/N.
    pub bound_value: f64,
    /// L*(ε*_i / ε_i^(i-1)); infinite when the ratio reaches 1.
    pub limit: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub groups: Vec<GroupFeasibility>,
    /// For equal targets: L*(ε) · min_i β_i / α_i, compared against K/N.
    pub equal_target_bound: Option<(f64, bool)>,
}

impl FeasibilityReport {
    pub fn all_satisfied(&self) -> bool {
        self.groups.iter().all(|g| g.satisfied)
    }
}

/// Per-group necessary-and-sufficient load conditions. `entry_errors[i]`
/// is ε_i^(i-1) (use 1 for the first group, or for every group under
/// ACK-Group). β is the cumulative deadline fraction N_i / N.
pub fn feasibility_check(scn: &ValidatedScenario, entry_errors: &[f64], search: &LoadSearch) -> Result<FeasibilityReport, BoundError> {
    let load = scn.num_devices() as f64 / scn.num_slots() as f64;
    let alpha = scn.alpha();
    let beta = &scn.cumulative_fraction;
    let targets = scn.targets();
    let mut groups = Vec::with_capacity(alpha.len());
    for i in 0..alpha.len() {
        let prior = entry_errors[i];
        let bound_value = prior * alpha[i] / beta[i] * load;
        let relative = if prior > 0.0 { targets[i] / prior } else { 1.0 };
        let limit = if relative >= 1.0 {
            f64::INFINITY
        } else {
            let b = max_load_single(relative, search)?;
            if b.saturated {
                f64::INFINITY
            } else {
                b.load
            }
        };
        groups.push(GroupFeasibility { bound_value, limit, satisfied: bound_value <= limit });
    }

    let equal = targets.windows(2).all(|w| w[0] == w[1]);
    let equal_target_bound = if equal && targets[0] < 1.0 {
        let l = max_load_single(targets[0], search)?.load;
        let min_ratio = beta.iter().zip(&alpha).map(|(b, a)| b / a).fold(f64::INFINITY, f64::min);
        let bound = l * min_ratio;
        Some((bound, load <= bound))
    } else {
        None
    };
    Ok(FeasibilityReport { groups, equal_target_bound })
}

/// Convenience wrapper taking ε_i^(i-1) from an analyzer trace.
pub fn feasibility_from_trace(scn: &ValidatedScenario, trace: &EvolutionTrace, search: &LoadSearch) -> Result<FeasibilityReport, BoundError> {
    feasibility_check(scn, &trace.entry_errors(), search)
}

/// b = 1 − min(1, L* N / K): barring probability that caps the admitted
/// population at L* N on average.
pub fn blocking_probability(l_star: f64, num_devices: usize, num_slots: usize) -> f64 {
    if num_devices == 0 {
        return 0.0;
    }
    1.0 - f64::min(1.0, l_star * num_slots as f64 / num_devices as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::{validate_scenario, AckScheme, Scenario};
    use approx::assert_abs_diff_eq;

    #[test]
    fn max_load_anchor() {
        let b = max_load_single(0.02, &LoadSearch::default()).unwrap();
        assert!(!b.saturated);
        assert!((b.load - 1.0 / 1.2).abs() / (1.0 / 1.2) < 0.01, "L* = {}", b.load);
        assert!(b.error_at_load <= 0.02);
    }

    #[test]
    fn max_load_monotone_in_target() {
        let s = LoadSearch { g_step: 0.05, ..LoadSearch::default() };
        let mut last = 0.0;
        for eps in [1e-3, 1e-2, 5e-2, 0.2] {
            let l = max_load_single(eps, &s).unwrap().load;
            assert!(l >= last, "L*({eps}) = {l} < {last}");
            last = l;
        }
    }

    #[test]
    fn trivial_target_saturates() {
        let b = max_load_single(1.0, &LoadSearch::default()).unwrap();
        assert!(b.saturated);
        assert_eq!(b.load, 10.0);
        assert!(max_load_single(0.0, &LoadSearch::default()).is_err());
    }

    #[test]
    fn finite_size_lowers_capacity() {
        let asym = max_load_single(0.02, &LoadSearch { g_step: 0.02, ..LoadSearch::default() }).unwrap();
        let fin = max_load_single(
            0.02,
            &LoadSearch { g_step: 0.02, finite_size: Some(FiniteSize { c: 1.0, num_slots: 200 }), ..LoadSearch::default() },
        )
        .unwrap();
        assert!(fin.load < asym.load);
    }

    #[test]
    fn blocking_examples() {
        assert_abs_diff_eq!(blocking_probability(0.8, 2000, 1000), 0.6, epsilon = 1e-12);
        assert_eq!(blocking_probability(0.8, 500, 1000), 0.0);
        assert_eq!(blocking_probability(0.8, 800, 1000), 0.0);
        assert_eq!(blocking_probability(0.8, 0, 1000), 0.0);
    }

    #[test]
    fn feasibility_examples() {
        let search = LoadSearch { g_step: 0.02, ..LoadSearch::default() };
        // r = 1, K/N = 0.5 against L*(0.02) ≈ 0.83
        let scn = validate_scenario(&Scenario::single_group(500, 1000, 0.02)).unwrap();
        let rep = feasibility_check(&scn, &[1.0], &search).unwrap();
        assert!(rep.all_satisfied());
        assert_abs_diff_eq!(rep.groups[0].bound_value, 0.5, epsilon = 1e-12);

        // equal targets, α = [0.5, 0.5], β = [0.7, 1.0] → min β/α = 1.4
        let scn = validate_scenario(&Scenario::from_fractions(500, 1000, &[0.5, 0.5], &[0.7, 1.0], &[0.02; 2], AckScheme::AckGroup)).unwrap();
        let rep = feasibility_check(&scn, &[1.0, 1.0], &search).unwrap();
        let l = max_load_single(0.02, &search).unwrap().load;
        let (bound, ok) = rep.equal_target_bound.unwrap();
        assert_abs_diff_eq!(bound, 1.4 * l, epsilon = 1e-12);
        assert!(ok);
        // first group reduces to α_1 K / (β_1 N)
        assert_abs_diff_eq!(rep.groups[0].bound_value, 0.5 * 0.5 / 0.7, epsilon = 1e-12);
    }
}
