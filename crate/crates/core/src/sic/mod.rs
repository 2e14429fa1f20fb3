//! Frame simulation: random transmission graphs, iterative SIC, ACK
//! feedback, Monte-Carlo aggregation and an exhaustive oracle for tiny
//! instances.

mod frame;
mod graph;

pub use frame::{
    run_frame, run_frame_with_rng, sample_graph, simulate_frame, AccessRule, AckLossMode, FrameOutcome, FrameRandomness, FrameSetup,
    RngSource,
};
pub use graph::{PeelResult, TransmissionGraph};

use std::fmt::Write;

use thiserror::Error;

use crate::qos::{AccessMatrix, MatrixError, ValidatedScenario};
use crate::rng::derived_rng;

/// Largest K·N accepted by [`exact_error_enumeration`].
pub const MAX_ENUMERATION_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("instance with K*N = {size} is too large to enumerate (limit {limit})")]
    InstanceTooLarge { size: usize, limit: usize },
    #[error("at least one trial is required")]
    NoTrials,
}

/// Per-trial summary kept for aggregation and trace output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub unresolved: Vec<Vec<f64>>,
    pub mean_transmissions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloStats {
    pub trials: usize,
    /// `[s][i]`, like [`FrameOutcome::unresolved`].
    pub mean_unresolved: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub mean_transmissions: Vec<f64>,
    pub stderr_transmissions: Vec<f64>,
}

impl MonteCarloStats {
    pub fn deadline_errors(&self) -> Vec<f64> {
        (0..self.mean_unresolved.len()).map(|i| self.mean_unresolved[i][i]).collect()
    }

    pub fn deadline_stderr(&self) -> Vec<f64> {
        (0..self.stderr.len()).map(|i| self.stderr[i][i]).collect()
    }

    /// Columns `group,subframe,mean_eps,stderr,mean_tx`, 1-based indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,subframe,mean_eps,stderr,mean_tx\n");
        let r = self.mean_unresolved.len();
        for i in 0..r {
            for s in 0..r {
                let _ = writeln!(
                    out,
                    "{},{},{:.10e},{:.10e},{:.10e}",
                    i + 1,
                    s + 1,
                    self.mean_unresolved[s][i],
                    self.stderr[s][i],
                    self.mean_transmissions[i]
                );
            }
        }
        out
    }
}

fn summarize(o: &FrameOutcome, r: usize) -> TrialSummary {
    TrialSummary { unresolved: o.unresolved.clone(), mean_transmissions: o.mean_transmissions(r) }
}

/// Runs `trials` frames; trial `t` draws from stream `t` of `seed`.
/// The result is ordered by trial regardless of scheduling.
pub fn monte_carlo_trials(setup: &FrameSetup, trials: usize, seed: u64) -> Result<Vec<TrialSummary>, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let r = setup.num_groups();
    let one = |t: usize| -> Result<TrialSummary, SimError> {
        let o = run_frame_with_rng(setup, &mut derived_rng(seed, t as u64))?;
        Ok(summarize(&o, r))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(one).collect()
    }
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sequential reduction in trial order.
pub fn aggregate(trials: &[TrialSummary]) -> MonteCarloStats {
    let n = trials.len();
    let r = trials.first().map_or(0, |t| t.mean_transmissions.len());
    let mut mean_unresolved = vec![vec![0.0; r]; r];
    let mut stderr = vec![vec![0.0; r]; r];
    for s in 0..r {
        for i in 0..r {
            let (m, e) = mean_and_stderr(trials.iter().map(|t| t.unresolved[s][i]), n);
            mean_unresolved[s][i] = m;
            stderr[s][i] = e;
        }
    }
    let (mean_transmissions, stderr_transmissions) = (0..r).map(|i| mean_and_stderr(trials.iter().map(|t| t.mean_transmissions[i]), n)).unzip();
    MonteCarloStats { trials: n, mean_unresolved, stderr, mean_transmissions, stderr_transmissions }
}

pub fn monte_carlo_setup(setup: &FrameSetup, trials: usize, seed: u64) -> Result<MonteCarloStats, SimError> {
    Ok(aggregate(&monte_carlo_trials(setup, trials, seed)?))
}

/// Monte-Carlo estimate for `scn` under `g` with the default ACK-loss mode.
pub fn monte_carlo(scn: &ValidatedScenario, g: &AccessMatrix, trials: usize, seed: u64) -> Result<MonteCarloStats, SimError> {
    monte_carlo_setup(&FrameSetup::new(scn, g)?, trials, seed)
}

/// Columns `trial,group,subframe,unresolved,mean_tx`, 1-based indices.
pub fn trials_csv(trials: &[TrialSummary]) -> String {
    let mut out = String::from("trial,group,subframe,unresolved,mean_tx\n");
    for (t, tr) in trials.iter().enumerate() {
        let r = tr.mean_transmissions.len();
        for i in 0..r {
            for s in 0..r {
                let _ = writeln!(out, "{},{},{},{},{}", t + 1, i + 1, s + 1, tr.unresolved[s][i], tr.mean_transmissions[i]);
            }
        }
    }
    out
}

/// Replays a fixed prefix of binary decisions, then answers `false`,
/// recording every decision and the probability of the path taken.
struct Scripted {
    prefix: Vec<bool>,
    trail: Vec<bool>,
    weight: f64,
}

impl Scripted {
    fn choose(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        let v = self.prefix.get(self.trail.len()).copied().unwrap_or(false);
        self.trail.push(v);
        self.weight *= if v { p } else { 1.0 - p };
        v
    }
}

impl FrameRandomness for Scripted {
    fn transmit_slots(&mut self, n: usize, p: f64, out: &mut Vec<usize>) {
        for j in 0..n {
            if self.choose(p) {
                out.push(j);
            }
        }
    }

    fn coin(&mut self, p: f64) -> bool {
        self.choose(p)
    }
}

/// First and second moments of the per-subframe unresolved fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    /// `[s][i]` expectation.
    pub mean: Vec<Vec<f64>>,
    /// `[s][i]` expectation of the square.
    pub second: Vec<Vec<f64>>,
}

impl ExactMoments {
    /// Standard error of a `trials`-trial Monte-Carlo mean of entry `[s][i]`.
    pub fn standard_error(&self, s: usize, i: usize, trials: usize) -> f64 {
        let var = (self.second[s][i] - self.mean[s][i].powi(2)).max(0.0);
        (var / trials as f64).sqrt()
    }
}

/// Exact moments of the per-subframe unresolved fractions, by walking
/// every sequence of random decisions the frame can take.
pub fn exact_moments_setup(setup: &FrameSetup) -> Result<ExactMoments, SimError> {
    let size = setup.device_group.len() * setup.subframe_slots.iter().sum::<usize>();
    if size > MAX_ENUMERATION_SIZE {
        return Err(SimError::InstanceTooLarge { size, limit: MAX_ENUMERATION_SIZE });
    }
    let r = setup.num_groups();
    let mut mean = vec![vec![0.0; r]; r];
    let mut second = vec![vec![0.0; r]; r];
    let mut prefix = Vec::new();
    loop {
        let mut src = Scripted { prefix, trail: Vec::new(), weight: 1.0 };
        let (o, _) = simulate_frame(setup, &mut src)?;
        for s in 0..r {
            for i in 0..r {
                let x = o.unresolved[s][i];
                mean[s][i] += src.weight * x;
                second[s][i] += src.weight * x * x;
            }
        }
        // Depth-first successor: flip the deepest `false` to `true`.
        let mut trail = src.trail;
        while trail.last() == Some(&true) {
            trail.pop();
        }
        match trail.last_mut() {
            Some(last) => *last = true,
            None => return Ok(ExactMoments { mean, second }),
        }
        prefix = trail;
    }
}

/// Exact expectation of per-subframe unresolved fractions, `[s][i]`.
pub fn exact_enumeration_setup(setup: &FrameSetup) -> Result<Vec<Vec<f64>>, SimError> {
    Ok(exact_moments_setup(setup)?.mean)
}

/// Exact per-group error at each group's deadline.
pub fn exact_error_enumeration(scn: &ValidatedScenario, g: &AccessMatrix) -> Result<Vec<f64>, SimError> {
    let full = exact_enumeration_setup(&FrameSetup::new(scn, g)?)?;
    Ok((0..full.len()).map(|i| full[i][i]).collect())
}
