//! AND-OR tree density evolution for the grouped, subframed transmission
//! schemes.
//!
//! For subframe `s` the bipartite graph contains every slot of subframes
//! `0..=s` and every device still unresolved when that subframe started.
//! With Poisson degree spectra the recursion for the unresolved fraction of
//! group `i` collapses to
//!
//! ```text
//! q_i[l] = exp( - sum_{j<=s} zeta_i^(j) * exp(-E_j[l-1]) )
//! E_j[l] = sum_i g_i^(j) * q_i[l] / q_i^(j)[0]
//! ```
//!
//! where `q_i^(j)[0]` is the fraction of group `i` still unresolved when
//! subframe `j` began and `zeta_i^(j)` is the mean number of subframe-`j`
//! slots picked by such a device. Slots of subframe `j` only see the devices
//! that were present in `j`, so their mean degree is scaled by
//! `q_i^(s)[0] / q_i^(j)[0]` once earlier devices have been acknowledged.

use std::fmt::Write as _;

use thiserror::Error;

use crate::qos::{AccessMatrix, AckScheme, MatrixError, ValidatedScenario};

/// Steps whose increase exceeds this are treated as oscillation.
const OSCILLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyzerError {
    #[error(transparent)]
    InvalidMatrix(#[from] MatrixError),
    #[error("no convergence in subframe {subframe} after {iterations} iterations (last step {delta:e})")]
    NonConvergence { subframe: usize, iterations: usize, delta: f64 },
    #[error("tolerance must be positive and max_iter at least 1")]
    InvalidOptions,
}

/// Iteration controls for the fixed-point recursion.
///
/// `max_iter` is the number of SIC iterations the receiver performs per
/// subframe. Near the decoding threshold the recursion creeps along a
/// plateau for hundreds of steps, so this budget is part of the model and
/// not only a numerical safeguard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fail with [`AnalyzerError::NonConvergence`] when `max_iter` is hit.
    pub require_convergence: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { tol: 1e-12, max_iter: 100, require_convergence: false }
    }
}

impl EvolveOptions {
    /// Iterate to the true fixed point.
    pub fn converged() -> Self {
        EvolveOptions { tol: 1e-12, max_iter: 10_000, require_convergence: true }
    }

    fn check(&self) -> Result<(), AnalyzerError> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(AnalyzerError::InvalidOptions);
        }
        Ok(())
    }
}

/// Full record of one density-evolution run. Outer index is always the
/// subframe `s`, innermost the group `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    /// `history[s][l][i]` = q_i^(s)[l], `l = 0..=iterations_used[s]`.
    pub history: Vec<Vec<Vec<f64>>>,
    /// `epsilon[s][i]` = ε_i^(s).
    pub epsilon: Vec<Vec<f64>>,
    /// `zeta[s][i]` = ζ_i^(s).
    pub zeta: Vec<Vec<f64>>,
    /// `mixing_v[s][j][i]` = v̄_i^(j→s), share of the surviving edges of a
    /// subframe-`j` slot that belong to group `i` in graph `s`.
    pub mixing_v: Vec<Vec<Vec<f64>>>,
    /// `mixing_c[s][j][i]` = c̄_i^(j), share of a group-`i` device's edges
    /// that fall in subframe `j` of graph `s`.
    pub mixing_c: Vec<Vec<Vec<f64>>>,
    pub iterations_used: Vec<usize>,
    pub converged: Vec<bool>,
}

impl EvolutionTrace {
    pub fn num_groups(&self) -> usize {
        self.epsilon.first().map_or(0, Vec::len)
    }

    /// ε_i^(i): error of each group at its own deadline.
    pub fn deadline_errors(&self) -> Vec<f64> {
        (0..self.num_groups()).map(|i| self.epsilon[i][i]).collect()
    }

    /// ε_i^(i-1), with 1 for the first group.
    pub fn entry_errors(&self) -> Vec<f64> {
        (0..self.num_groups()).map(|i| if i == 0 { 1.0 } else { self.epsilon[i - 1][i] }).collect()
    }

    /// Long-format CSV: group, subframe, iteration, q (1-based group/subframe).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,subframe,iteration,q\n");
        for i in 0..self.num_groups() {
            for (s, iters) in self.history.iter().enumerate() {
                for (l, q) in iters.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", i + 1, s + 1, l, q[i]);
                }
            }
        }
        out
    }

    /// Summary CSV: group, subframe, epsilon, zeta, M_i.
    pub fn summary_csv(&self, transmissions: &[f64]) -> String {
        let mut out = String::from("group,subframe,epsilon,zeta,M_i\n");
        for i in 0..self.num_groups() {
            for s in 0..self.epsilon.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    i + 1,
                    s + 1,
                    self.epsilon[s][i],
                    self.zeta[s][i],
                    transmissions[i]
                );
            }
        }
        out
    }
}

/// Dispatches on the scenario's scheme.
pub fn evolve(scn: &ValidatedScenario, g: &AccessMatrix, opts: &EvolveOptions) -> Result<EvolutionTrace, AnalyzerError> {
    match scn.scheme() {
        AckScheme::AckAll => evolve_ack_all(scn, g, opts),
        AckScheme::AckGroup => evolve_ack_group(scn, g, opts),
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|&w| ratio(w, total)).collect()
}

/// ζ = g ΔN / |C|, with |C| = α K q0; errors when g exceeds |C|.
fn zeta_for(scn: &ValidatedScenario, g: f64, subframe: usize, group: usize, q0: f64) -> Result<f64, MatrixError> {
    if g == 0.0 {
        return Ok(0.0);
    }
    let residual = scn.alpha()[group] * scn.num_devices() as f64 * q0;
    if residual <= 0.0 || g > residual {
        return Err(MatrixError::ProbabilityExceedsOne { subframe, group, g, residual });
    }
    Ok(g * scn.subframe_slots[subframe] as f64 / residual)
}

/// Density evolution for the ACK-All scheme (any zero pattern permitted by
/// the scenario's latency mode).
pub fn evolve_ack_all(scn: &ValidatedScenario, g: &AccessMatrix, opts: &EvolveOptions) -> Result<EvolutionTrace, AnalyzerError> {
    opts.check()?;
    g.check_pattern(scn)?;
    let r = scn.num_groups();

    // start[j][i] = q_i^(j)[0]
    let mut start: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut zeta: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut trace = EvolutionTrace {
        history: Vec::with_capacity(r),
        epsilon: Vec::with_capacity(r),
        zeta: Vec::new(),
        mixing_v: Vec::with_capacity(r),
        mixing_c: Vec::with_capacity(r),
        iterations_used: Vec::with_capacity(r),
        converged: Vec::with_capacity(r),
    };
    let mut prev = vec![1.0; r];

    for s in 0..r {
        let q0 = prev.clone();
        let z = (0..r)
            .map(|i| zeta_for(scn, g.get(s, i), s, i, q0[i]))
            .collect::<Result<Vec<_>, _>>()?;
        start.push(q0.clone());
        zeta.push(z);

        let v: Vec<Vec<f64>> = (0..=s)
            .map(|j| {
                let w: Vec<f64> = (0..r).map(|i| ratio(q0[i], start[j][i]) * g.get(j, i)).collect();
                normalized(&w)
            })
            .collect();
        let c: Vec<Vec<f64>> = {
            let totals: Vec<f64> = (0..r).map(|i| (0..=s).map(|j| zeta[j][i]).sum()).collect();
            (0..=s).map(|j| (0..r).map(|i| ratio(zeta[j][i], totals[i])).collect()).collect()
        };

        let (history, converged) = iterate(s, &q0, opts, |q, out| {
            // exp(-E_j) for every slot type j <= s
            let free: Vec<f64> = (0..=s)
                .map(|j| {
                    let e: f64 = (0..r).map(|i| g.get(j, i) * ratio(q[i], start[j][i])).sum();
                    -e
                })
                .collect();
            for (i, o) in out.iter_mut().enumerate() {
                let mut exponent = 0.0;
                for (j, &neg_e) in free.iter().enumerate() {
                    let zj = zeta[j][i];
                    if zj > 0.0 {
                        // log-space product avoids underflow of ζ·e^{-E}
                        exponent += (zj.ln() + neg_e).exp();
                    }
                }
                *o = (-exponent).exp();
            }
        })?;

        prev = history.last().unwrap().clone();
        trace.iterations_used.push(history.len() - 1);
        trace.converged.push(converged);
        trace.epsilon.push(prev.clone());
        trace.history.push(history);
        trace.mixing_v.push(v);
        trace.mixing_c.push(c);
    }
    trace.zeta = zeta;
    Ok(trace)
}

/// Runs the monotone fixed-point map from `q0`.
fn iterate<F>(subframe: usize, q0: &[f64], opts: &EvolveOptions, mut step: F) -> Result<(Vec<Vec<f64>>, bool), AnalyzerError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut history = vec![q0.to_vec()];
    let mut next = vec![0.0; q0.len()];
    let mut delta = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let cur = history.last().unwrap();
        step(cur, &mut next);
        delta = 0.0;
        for (a, b) in cur.iter().zip(&next) {
            if *b > *a + OSCILLATION_TOL {
                return Err(AnalyzerError::NonConvergence { subframe, iterations: history.len(), delta: b - a });
            }
            delta = f64::max(delta, (b - a).abs());
        }
        history.push(next.clone());
        if delta < opts.tol {
            return Ok((history, true));
        }
    }
    if opts.require_convergence {
        return Err(AnalyzerError::NonConvergence { subframe, iterations: opts.max_iter, delta });
    }
    Ok((history, false))
}

/// Density evolution for the ACK-Group scheme: every group is decoded on
/// its own subframe only, `q = exp(-ζ exp(-g q))` with `ζ = g ΔN_i / (α_i K)`.
pub fn evolve_ack_group(scn: &ValidatedScenario, g: &AccessMatrix, opts: &EvolveOptions) -> Result<EvolutionTrace, AnalyzerError> {
    opts.check()?;
    let grp = scn.clone().with_scheme(AckScheme::AckGroup);
    g.check_pattern(&grp)?;
    let r = scn.num_groups();

    let mut eps = vec![1.0; r];
    let mut zeta = vec![vec![0.0; r]; r];
    let mut trace = EvolutionTrace {
        history: Vec::with_capacity(r),
        epsilon: Vec::with_capacity(r),
        zeta: Vec::new(),
        mixing_v: Vec::with_capacity(r),
        mixing_c: Vec::with_capacity(r),
        iterations_used: Vec::with_capacity(r),
        converged: Vec::with_capacity(r),
    };
    for s in 0..r {
        let gi = g.get(s, s);
        let z = zeta_for(scn, gi, s, s, 1.0)?;
        zeta[s][s] = z;
        let (own, converged) = iterate(s, &[1.0], opts, |q, out| {
            out[0] = if z > 0.0 { (-(z.ln() - gi * q[0]).exp()).exp() } else { 1.0 };
        })?;
        eps[s] = own.last().unwrap()[0];
        let history = own
            .iter()
            .map(|q| {
                let mut row: Vec<f64> = (0..r).map(|i| if i < s { eps[i] } else { 1.0 }).collect();
                row[s] = q[0];
                row
            })
            .collect();
        trace.iterations_used.push(own.len() - 1);
        trace.converged.push(converged);
        trace.history.push(history);
        trace.epsilon.push((0..r).map(|i| if i <= s { eps[i] } else { 1.0 }).collect());
        let unit = |j: usize| -> Vec<f64> { (0..r).map(|i| if i == j && g.get(j, j) > 0.0 { 1.0 } else { 0.0 }).collect() };
        trace.mixing_v.push((0..=s).map(unit).collect());
        trace.mixing_c.push((0..=s).map(unit).collect());
    }
    trace.zeta = zeta;
    Ok(trace)
}

/// Single group, single subframe: ε(g, K/N) from the scalar recursion.
pub fn single_group_error(g: f64, load: f64, opts: &EvolveOptions) -> f64 {
    if g <= 0.0 {
        return 1.0;
    }
    let ln_zeta = (g / load).ln();
    let mut q = 1.0f64;
    for _ in 0..opts.max_iter {
        let next = (-(ln_zeta - g * q).exp()).exp();
        let done = (next - q).abs() < opts.tol;
        q = next;
        if done {
            break;
        }
    }
    q
}

/// M_i = Σ_s g_i^(s) ΔN_s / (α_i K): mean transmissions per group-`i` device.
pub fn avg_transmissions(scn: &ValidatedScenario, g: &AccessMatrix) -> Vec<f64> {
    let k = scn.num_devices() as f64;
    let alpha = scn.alpha();
    (0..scn.num_groups())
        .map(|i| {
            (0..scn.num_groups())
                .map(|s| g.get(s, i) * scn.subframe_slots[s] as f64)
                .sum::<f64>()
                / (alpha[i] * k)
        })
        .collect()
}

/// Deadline errors with and without the finite-size correction.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSizeEstimate {
    /// ε_i^(i) at the nominal matrix.
    pub raw: Vec<f64>,
    /// Mean of ε_i^(i) at G − σ, G and G + σ.
    pub corrected: Vec<f64>,
}

/// Shifts every nonzero entry by `sign * c * sqrt(g / ΔN_s)`, clamped at 0.
pub fn perturbed_matrix(scn: &ValidatedScenario, g: &AccessMatrix, c: f64, sign: f64) -> AccessMatrix {
    let r = g.size();
    let mut out = g.clone();
    for s in 0..r {
        for i in 0..r {
            let v = g.get(s, i);
            if v > 0.0 {
                let sigma = c * (v / scn.subframe_slots[s] as f64).sqrt();
                out.set(s, i, (v + sign * sigma).max(0.0));
            }
        }
    }
    out
}

/// Finite-size corrected deadline errors: the average of the analyzer at
/// the nominal matrix and at each nonzero entry shifted by ∓σ.
pub fn finite_size_error(scn: &ValidatedScenario, g: &AccessMatrix, c: f64, opts: &EvolveOptions) -> Result<FiniteSizeEstimate, AnalyzerError> {
    let raw = evolve(scn, g, opts)?.deadline_errors();
    if c == 0.0 {
        return Ok(FiniteSizeEstimate { corrected: raw.clone(), raw });
    }
    let minus = evolve(scn, &perturbed_matrix(scn, g, c, -1.0), opts)?.deadline_errors();
    let plus = evolve(scn, &perturbed_matrix(scn, g, c, 1.0), opts)?.deadline_errors();
    let corrected = (0..raw.len()).map(|i| (minus[i] + raw[i] + plus[i]) / 3.0).collect();
    Ok(FiniteSizeEstimate { raw, corrected })
}
