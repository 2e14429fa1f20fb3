//! Browser bindings: the single-group error curve, a multi-group analyzer
//! run and a simulation check against it.

use wasm_bindgen::prelude::*;

use rma_core::bounds::{FiniteSize, LoadSearch};
use rma_core::evolution::{evolve, EvolveOptions};
use rma_core::qos::{validate_scenario, AccessMatrix, AckScheme, Scenario};
use rma_core::sic::monte_carlo;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// ε(g) at load K/N for `steps + 1` values of g in `[g_min, g_max]`,
/// averaged over g ± c√(g/N) when `c > 0`.
#[wasm_bindgen]
pub fn error_curve(load: f64, g_min: f64, g_max: f64, steps: usize, c: f64, num_slots: usize) -> Vec<f64> {
    let search = LoadSearch {
        finite_size: (c > 0.0 && num_slots > 0).then_some(FiniteSize { c, num_slots }),
        evolve: EvolveOptions::default(),
        ..LoadSearch::default()
    };
    let steps = steps.max(1);
    (0..=steps)
        .map(|k| {
            let g = g_min + (g_max - g_min) * k as f64 / steps as f64;
            search.error(g, load)
        })
        .collect()
}

fn scenario(num_devices: usize, num_slots: usize, alpha: &[f64], beta: &[f64], ack_all: bool) -> Result<rma_core::qos::ValidatedScenario, JsValue> {
    if alpha.len() != beta.len() || alpha.is_empty() {
        return Err(JsValue::from_str("alpha and beta need the same, nonzero length"));
    }
    let scheme = if ack_all { AckScheme::AckAll } else { AckScheme::AckGroup };
    let targets = vec![1e-3; alpha.len()];
    validate_scenario(&Scenario::from_fractions(num_devices, num_slots, alpha, beta, &targets, scheme)).map_err(js_err)
}

fn matrix(r: usize, g: &[f64]) -> Result<AccessMatrix, JsValue> {
    if g.len() != r * r {
        return Err(JsValue::from_str("G must have r × r entries, row per subframe"));
    }
    AccessMatrix::from_rows(g.chunks(r).map(<[f64]>::to_vec).collect()).map_err(js_err)
}

/// Unresolved fraction of each group after each subframe, flattened row
/// per subframe (`out[s * r + i]`).
#[wasm_bindgen]
pub fn group_errors(num_devices: usize, num_slots: usize, alpha: &[f64], beta: &[f64], ack_all: bool, g: &[f64]) -> Result<Vec<f64>, JsValue> {
    let scn = scenario(num_devices, num_slots, alpha, beta, ack_all)?;
    let g = matrix(alpha.len(), g)?;
    let trace = evolve(&scn, &g, &EvolveOptions::default()).map_err(js_err)?;
    Ok(trace.epsilon.concat())
}

/// `[simulated ε, its standard error, analyzer ε]` for every group at its
/// deadline, flattened.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_vs_analyzer(
    num_devices: usize,
    num_slots: usize,
    alpha: &[f64],
    beta: &[f64],
    ack_all: bool,
    g: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, JsValue> {
    let scn = scenario(num_devices, num_slots, alpha, beta, ack_all)?;
    let g = matrix(alpha.len(), g)?;
    let de = evolve(&scn, &g, &EvolveOptions::default()).map_err(js_err)?.deadline_errors();
    let mc = monte_carlo(&scn, &g, trials.max(1), seed).map_err(js_err)?;
    let (eps, se) = (mc.deadline_errors(), mc.deadline_stderr());
    Ok((0..de.len()).flat_map(|i| [eps[i], se[i], de[i]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_shows_the_knife_edge() {
        let curve = error_curve(1.0 / 1.2, 3.49, 3.50, 1, 0.0, 0);
        assert!(curve[0] < 0.05 && curve[1] > 0.5);
    }

    #[test]
    fn flattened_layouts() {
        let g = [1.5, 0.5, 0.0, 1.0];
        let e = group_errors(1000, 2000, &[0.5, 0.5], &[0.5, 1.0], true, &g).unwrap();
        assert_eq!(e.len(), 4);
        let s = simulate_vs_analyzer(200, 400, &[0.5, 0.5], &[0.5, 1.0], true, &g, 20, 1).unwrap();
        assert_eq!(s.len(), 6);
        assert!((s[2] - e[0]).abs() < 1e-12);
        // the analyzer only sees ratios, so K = 200 and K = 1000 agree
        assert!((s[5] - e[3]).abs() < 1e-12);
    }
}
