//! Multi-frame queueing: Poisson arrivals, dynamic access barring, and
//! either RMA frames or a RACH-based baseline in each frame.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{max_load_single, BoundError, FiniteSize, LoadSearch};
use crate::rng::{derived_rng, SimRng};
use crate::sic::{simulate_frame, AccessRule, AckLossMode, FrameSetup, RngSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid dynamics configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("stability is not monotone in the arrival rate: stable at {stable} after unstable at {unstable}")]
    NonMonotoneStability { unstable: f64, stable: f64, scan: Box<CapacityScan> },
}

/// Number of resource blocks available in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceModel {
    FixedRbs(usize),
    /// Uniform over `lo..=hi`.
    UniformRandomRbs { lo: usize, hi: usize },
}

impl ResourceModel {
    fn draw(&self, rng: &mut SimRng) -> usize {
        match *self {
            ResourceModel::FixedRbs(n) => n,
            ResourceModel::UniformRandomRbs { lo, hi } => rng.random_range(lo..=hi),
        }
    }

    fn range(&self) -> std::ops::RangeInclusive<usize> {
        match *self {
            ResourceModel::FixedRbs(n) => n..=n,
            ResourceModel::UniformRandomRbs { lo, hi } => lo..=hi,
        }
    }

    pub fn mean(&self) -> f64 {
        let r = self.range();
        (*r.start() + *r.end()) as f64 / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessScheme {
    /// Every RB is a slot of one RMA frame.
    Rma,
    /// A fixed number of RBs per frame carries RACH preambles.
    DabFixedRachRbs(usize),
    /// A fixed fraction of the RBs per frame carries RACH preambles.
    DabFixedRachFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadEstimator {
    /// The base station knows the backlog size.
    Known,
    /// K[i] = λ + K[i−1] − K_s[i−1]. Its error is a random walk driven by
    /// the arrival noise, so it drifts without bound over long runs.
    Recursive,
    /// The same recursion with the admitted count (1 − b)K[i−1] replaced by
    /// the count inferred from idle slots or idle preambles.
    SlotStatistics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Mean packet arrivals per frame.
    pub arrival_rate: f64,
    pub frames: usize,
    pub resource_model: ResourceModel,
    pub scheme: AccessScheme,
    pub preambles_per_rb: usize,
    /// The estimated load is inflated by 1 + rho.
    pub rho: f64,
    pub load_estimator: LoadEstimator,
    pub delay_threshold_frames: f64,
    pub warmup_frames: usize,
    /// Error target behind the RMA load bound.
    pub target_error: f64,
    /// Finite-size constant used when computing the RMA load bound per RB count.
    pub finite_size_c: f64,
    pub feedback_loss_prob: f64,
    pub ack_loss_mode: AckLossMode,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            arrival_rate: 10.0,
            frames: 600,
            resource_model: ResourceModel::UniformRandomRbs { lo: 0, hi: 100 },
            scheme: AccessScheme::Rma,
            preambles_per_rb: 8,
            rho: 0.0,
            load_estimator: LoadEstimator::SlotStatistics,
            delay_threshold_frames: 10.0,
            warmup_frames: 100,
            target_error: 0.15,
            finite_size_c: 7.0,
            feedback_loss_prob: 0.0,
            ack_loss_mode: AckLossMode::Optimistic,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidConfig(m));
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad(format!("arrival rate {} must be finite and non-negative", self.arrival_rate));
        }
        if self.frames <= self.warmup_frames {
            return bad(format!("{} frames do not exceed the {} warm-up frames", self.frames, self.warmup_frames));
        }
        if !(self.delay_threshold_frames >= 1.0) {
            return bad(format!("delay threshold {} is below one frame", self.delay_threshold_frames));
        }
        if let AccessScheme::DabFixedRachFraction(f) = self.scheme {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("RACH fraction {f} outside [0, 1]"));
            }
        }
        if let ResourceModel::UniformRandomRbs { lo, hi } = self.resource_model {
            if lo > hi {
                return bad(format!("RB range {lo}..={hi} is empty"));
            }
        }
        if !(0.0..1.0).contains(&self.feedback_loss_prob) {
            return bad(format!("feedback loss probability {} outside [0, 1)", self.feedback_loss_prob));
        }
        if !(self.target_error > 0.0 && self.target_error < 1.0) {
            return bad(format!("target error {} outside (0, 1)", self.target_error));
        }
        if !(self.rho > -1.0) {
            return bad(format!("rho {} must exceed -1", self.rho));
        }
        Ok(())
    }
}

/// Load bound L*_N and the matching g for each RB count N, computed with
/// the finite-size correction for N slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmaTable {
    entries: BTreeMap<usize, (f64, f64)>,
}

impl RmaTable {
    pub fn for_config(config: &DynamicsConfig) -> Result<RmaTable, DynamicsError> {
        let mut t = RmaTable::default();
        if config.scheme == AccessScheme::Rma {
            for n in config.resource_model.range() {
                t.insert(n, config.target_error, config.finite_size_c)?;
            }
        }
        Ok(t)
    }

    pub fn insert(&mut self, n: usize, target: f64, c: f64) -> Result<(), DynamicsError> {
        if self.entries.contains_key(&n) {
            return Ok(());
        }
        let entry = if n == 0 {
            (0.0, 0.0)
        } else {
            let search = LoadSearch {
                g_step: 0.02,
                load_tol: 1e-3,
                finite_size: (c > 0.0).then_some(FiniteSize { c, num_slots: n }),
                ..LoadSearch::default()
            };
            let b = max_load_single(target, &search)?;
            (b.load, b.best_g)
        };
        self.entries.insert(n, entry);
        Ok(())
    }

    /// (L*_N, g_N).
    pub fn get(&self, n: usize) -> (f64, f64) {
        self.entries.get(&n).copied().unwrap_or((0.0, 0.0))
    }
}

/// K[i] = λ + K[i−1] − K_s[i−1] (never negative). `prev = None` on the
/// first frame, where the estimate is λ.
pub fn estimate_load(prev: Option<(f64, usize)>, arrival_rate: f64) -> f64 {
    match prev {
        None => arrival_rate,
        Some((k, served)) => (arrival_rate + k - served as f64).max(0.0),
    }
}

/// The same recursion written out with the barring split, as in the
/// protocol description: λ + ((1−b)K − K_s) + bK.
pub fn estimate_load_split(arrival_rate: f64, barring: f64, k: f64, served: usize) -> f64 {
    (arrival_rate + ((1.0 - barring) * k - served as f64) + barring * k).max(0.0)
}

/// Number of contenders inferred from `idle` of `cells` cells left empty when
/// each contender occupies each cell independently with probability `p`.
/// An empty count is read as half a cell. `None` when nothing can be learned.
pub fn contenders_from_idle(idle: usize, cells: usize, p: f64) -> Option<f64> {
    if cells == 0 || !(p > 0.0 && p < 1.0) {
        return None;
    }
    let frac = if idle == 0 { 0.5 } else { idle as f64 } / cells as f64;
    Some(frac.ln() / (-p).ln_1p())
}

/// [`estimate_load`] with the admitted count of the last frame taken from
/// the slot statistics when available.
pub fn estimate_load_observed(arrival_rate: f64, barring: f64, k: f64, admitted_estimate: Option<f64>, served: usize) -> f64 {
    let admitted = admitted_estimate.unwrap_or((1.0 - barring) * k);
    (arrival_rate + (admitted - served as f64).max(0.0) + barring * k).max(0.0)
}

/// Preamble contention: each packet picks one of `8 · rach_rbs` preambles;
/// packets alone on their preamble succeed, and at most `data_rbs` of them,
/// chosen uniformly, are granted a data RB. Returns indices into
/// `0..admitted`.
pub fn dab_rach_contend(admitted: usize, rach_rbs: usize, data_rbs: usize, preambles_per_rb: usize, rng: &mut SimRng) -> Vec<usize> {
    dab_rach_round(admitted, rach_rbs, data_rbs, preambles_per_rb, rng).0
}

/// [`dab_rach_contend`] that also returns the number of idle preambles.
pub fn dab_rach_round(admitted: usize, rach_rbs: usize, data_rbs: usize, preambles_per_rb: usize, rng: &mut SimRng) -> (Vec<usize>, usize) {
    let preambles = rach_rbs * preambles_per_rb;
    if preambles == 0 || admitted == 0 {
        return (Vec::new(), preambles);
    }
    let choice: Vec<usize> = (0..admitted).map(|_| rng.random_range(0..preambles)).collect();
    let mut count = vec![0u32; preambles];
    for &c in &choice {
        count[c] += 1;
    }
    let idle = count.iter().filter(|&&c| c == 0).count();
    let singles: Vec<usize> = (0..admitted).filter(|&d| count[choice[d]] == 1).collect();
    if singles.len() <= data_rbs {
        return (singles, idle);
    }
    let mut granted: Vec<usize> = sample(rng, singles.len(), data_rbs).into_iter().map(|j| singles[j]).collect();
    granted.sort_unstable();
    (granted, idle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Packet {
    arrival: usize,
    delivered: bool,
}

/// Queue state carried between frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicsState {
    pub frame: usize,
    backlog: Vec<Packet>,
    /// Barring probability used in the last frame.
    pub barring: f64,
    /// Uninflated estimate K[i] from the last frame.
    pub k_estimate: Option<f64>,
    /// Packets the base station resolved in the last frame.
    pub last_resolved: usize,
    /// Admitted count inferred from the last frame's idle slots.
    pub last_observed: Option<f64>,
    pub total_arrivals: usize,
    pub total_delivered: usize,
    pub total_barred: usize,
    pub delay_sum: f64,
}

impl DynamicsState {
    pub fn backlog(&self) -> usize {
        self.backlog.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub rbs: usize,
    pub arrivals: usize,
    pub k_hat: f64,
    pub barring: f64,
    pub admitted: usize,
    /// Packets decoded for the first time (throughput).
    pub resolved: usize,
    /// Packets that left the queue (decoded and acknowledged).
    pub departed: usize,
    pub backlog: usize,
    pub delay_sum: f64,
    pub mean_delay_so_far: f64,
}

/// Admits each of `n` packets independently with probability 1 − b and
/// returns the admitted indices, ascending.
pub fn admit(n: usize, barring: f64, rng: &mut SimRng) -> Vec<usize> {
    let pass = (1.0 - barring).clamp(0.0, 1.0);
    let count = if pass >= 1.0 {
        n
    } else if pass <= 0.0 || n == 0 {
        0
    } else {
        Binomial::new(n as u64, pass).expect("valid binomial").sample(rng) as usize
    };
    let mut idx: Vec<usize> = if count == n { (0..n).collect() } else { sample(rng, n, count).into_vec() };
    idx.sort_unstable();
    idx
}

/// Outcome of one contention round over `k` admitted packets with `n` RBs.
struct Round {
    /// Indices decoded.
    won: Vec<usize>,
    /// Per decoded packet, whether its ACK arrived.
    acked: Vec<bool>,
    /// Admitted count inferred from idle slots or preambles.
    observed: Option<f64>,
}

fn contend(config: &DynamicsConfig, table: &RmaTable, k: usize, n: usize, k_expected: f64, rng: &mut SimRng) -> Round {
    match config.scheme {
        AccessScheme::Rma => {
            let (_, g) = table.get(n);
            if n == 0 || g <= 0.0 {
                return Round { won: Vec::new(), acked: Vec::new(), observed: None };
            }
            // Devices only learn the broadcast g / K̂; p stays at most 1/2.
            let p = (g / k_expected.max(2.0 * g)).min(1.0);
            let setup = FrameSetup {
                subframe_slots: vec![n],
                device_group: vec![0; k],
                allowed: vec![vec![true]],
                rule: AccessRule::Probability(vec![vec![p]]),
                feedback_loss_prob: config.feedback_loss_prob,
                ack_loss_mode: config.ack_loss_mode,
            };
            let (out, graph) = simulate_frame(&setup, &mut RngSource(&mut *rng)).expect("probability rule cannot fail");
            let mut busy = vec![false; n];
            for d in 0..k {
                for &j in graph.edges(d) {
                    busy[j] = true;
                }
            }
            let idle = busy.iter().filter(|&&b| !b).count();
            let mut lost = vec![false; k];
            for &d in &out.ack_lost {
                lost[d] = true;
            }
            let won: Vec<usize> = (0..k).filter(|&d| out.resolved_at[d].is_some()).collect();
            let acked = won.iter().map(|&d| !lost[d]).collect();
            Round { won, acked, observed: contenders_from_idle(idle, n, p) }
        }
        AccessScheme::DabFixedRachRbs(_) | AccessScheme::DabFixedRachFraction(_) => {
            let rach = rach_rbs(config.scheme, n);
            let (won, idle) = dab_rach_round(k, rach, n - rach, config.preambles_per_rb, rng);
            let acked = won.iter().map(|_| !rng.random_bool(config.feedback_loss_prob)).collect();
            let cells = rach * config.preambles_per_rb;
            let observed = if cells > 0 { contenders_from_idle(idle, cells, 1.0 / cells as f64) } else { None };
            Round { won, acked, observed }
        }
    }
}

fn rach_rbs(scheme: AccessScheme, n: usize) -> usize {
    match scheme {
        AccessScheme::Rma => 0,
        AccessScheme::DabFixedRachRbs(m) => m.min(n),
        AccessScheme::DabFixedRachFraction(f) => ((f * n as f64).round() as usize).min(n),
    }
}

/// Admission limit this frame: L*_N · N for RMA, the preamble count for DAB.
fn admission_limit(config: &DynamicsConfig, table: &RmaTable, n: usize) -> f64 {
    match config.scheme {
        AccessScheme::Rma => table.get(n).0 * n as f64,
        scheme => (rach_rbs(scheme, n) * config.preambles_per_rb) as f64,
    }
}

/// Advances the queue by one frame.
pub fn step_frame(state: &mut DynamicsState, config: &DynamicsConfig, table: &RmaTable, rng: &mut SimRng) -> FrameRecord {
    let frame = state.frame;
    let arrivals = if config.arrival_rate > 0.0 {
        Poisson::new(config.arrival_rate).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    state.backlog.extend(std::iter::repeat_n(Packet { arrival: frame, delivered: false }, arrivals));
    state.total_arrivals += arrivals;

    let rbs = config.resource_model.draw(rng);
    let k_est = match config.load_estimator {
        LoadEstimator::Known => state.backlog.len() as f64,
        LoadEstimator::Recursive => estimate_load(state.k_estimate.map(|k| (k, state.last_resolved)), config.arrival_rate),
        LoadEstimator::SlotStatistics => match state.k_estimate {
            None => config.arrival_rate,
            Some(k) => estimate_load_observed(config.arrival_rate, state.barring, k, state.last_observed, state.last_resolved),
        },
    };
    let k_hat = k_est * (1.0 + config.rho);
    let limit = admission_limit(config, table, rbs);
    let barring = if k_hat > 0.0 { 1.0 - f64::min(1.0, limit / k_hat) } else { 0.0 };

    let admitted = admit(state.backlog.len(), barring, rng);
    let k_expected = (1.0 - barring) * k_hat;
    let Round { won, acked, observed } = contend(config, table, admitted.len(), rbs, k_expected, rng);

    let mut resolved = 0;
    let mut delay_sum = 0.0;
    let mut leaving = vec![false; state.backlog.len()];
    for (&j, &ack) in won.iter().zip(&acked) {
        let idx = admitted[j];
        let p = &mut state.backlog[idx];
        if !p.delivered {
            p.delivered = true;
            resolved += 1;
            delay_sum += (frame - p.arrival + 1) as f64;
        }
        if ack {
            leaving[idx] = true;
        }
    }
    let mut i = 0;
    state.backlog.retain(|_| {
        i += 1;
        !leaving[i - 1]
    });
    let departed = leaving.iter().filter(|&&x| x).count();

    state.total_barred += state.backlog.len() + departed - admitted.len();
    state.total_delivered += resolved;
    state.delay_sum += delay_sum;
    state.barring = barring;
    state.k_estimate = Some(k_est);
    state.last_resolved = won.len();
    state.last_observed = observed;
    state.frame += 1;

    FrameRecord {
        frame,
        rbs,
        arrivals,
        k_hat,
        barring,
        admitted: admitted.len(),
        resolved,
        departed,
        backlog: state.backlog.len(),
        delay_sum,
        mean_delay_so_far: if state.total_delivered == 0 { 0.0 } else { state.delay_sum / state.total_delivered as f64 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsSummary {
    pub arrival_rate: f64,
    pub frames: usize,
    pub warmup_frames: usize,
    /// Mean packets delivered per post-warm-up frame.
    pub throughput: f64,
    /// Mean barring probability after warm-up.
    pub mean_barring: f64,
    /// Mean delay, in frames, of packets delivered after warm-up.
    pub mean_delay: f64,
    pub final_backlog: usize,
    /// Least-squares slope of the backlog over the post-warm-up frames.
    pub backlog_slope: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsRun {
    pub records: Vec<FrameRecord>,
    pub summary: DynamicsSummary,
}

impl DynamicsRun {
    /// Columns `frame,rbs,arrivals,k_hat,b,admitted,resolved,departed,backlog,mean_delay_so_far`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,rbs,arrivals,k_hat,b,admitted,resolved,departed,backlog,mean_delay_so_far\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{},{},{},{:.6}",
                r.frame + 1,
                r.rbs,
                r.arrivals,
                r.k_hat,
                r.barring,
                r.admitted,
                r.resolved,
                r.departed,
                r.backlog,
                r.mean_delay_so_far
            );
        }
        out
    }
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in ys.iter().enumerate() {
        let dx = x as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn summarize(config: &DynamicsConfig, records: Vec<FrameRecord>) -> DynamicsRun {
    let post = &records[config.warmup_frames..];
    let n = post.len() as f64;
    let delivered: usize = post.iter().map(|r| r.resolved).sum();
    let delay: f64 = post.iter().map(|r| r.delay_sum).sum();
    let arrivals: usize = post.iter().map(|r| r.arrivals).sum();
    let mean_delay = if delivered == 0 { if arrivals == 0 { 0.0 } else { f64::INFINITY } } else { delay / delivered as f64 };
    let summary = DynamicsSummary {
        arrival_rate: config.arrival_rate,
        frames: config.frames,
        warmup_frames: config.warmup_frames,
        throughput: delivered as f64 / n,
        mean_barring: post.iter().map(|r| r.barring).sum::<f64>() / n,
        mean_delay,
        final_backlog: records.last().map_or(0, |r| r.backlog),
        backlog_slope: slope(&post.iter().map(|r| r.backlog as f64).collect::<Vec<_>>()),
        stable: mean_delay <= config.delay_threshold_frames,
    };
    DynamicsRun { records, summary }
}

/// Runs `config.frames` frames with a precomputed table.
pub fn run_dynamics_with_table(config: &DynamicsConfig, table: &RmaTable, seed: u64) -> Result<DynamicsRun, DynamicsError> {
    config.validate()?;
    let mut rng = derived_rng(seed, 0);
    let mut state = DynamicsState::default();
    let records = (0..config.frames).map(|_| step_frame(&mut state, config, table, &mut rng)).collect();
    Ok(summarize(config, records))
}

pub fn run_dynamics(config: &DynamicsConfig, seed: u64) -> Result<DynamicsRun, DynamicsError> {
    config.validate()?;
    run_dynamics_with_table(config, &RmaTable::for_config(config)?, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityScan {
    pub points: Vec<DynamicsSummary>,
    /// Largest stable arrival rate of the grid.
    pub max_stable: Option<f64>,
}

impl CapacityScan {
    /// Columns `lambda,throughput,mean_delay,mean_barring,final_backlog,stable`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,throughput,mean_delay,mean_barring,final_backlog,stable\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{}",
                p.arrival_rate, p.throughput, p.mean_delay, p.mean_barring, p.final_backlog, p.stable
            );
        }
        out
    }
}

/// Runs every rate of the ascending grid (point `j` on stream `j` of
/// `seed`) and returns the largest stable one. Fails if a stable rate
/// follows an unstable one.
pub fn capacity_scan(config: &DynamicsConfig, grid: &[f64], seed: u64) -> Result<CapacityScan, DynamicsError> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(DynamicsError::InvalidConfig("arrival-rate grid must be ascending".into()));
    }
    config.validate()?;
    let table = RmaTable::for_config(config)?;
    let one = |(j, &lambda): (usize, &f64)| -> Result<DynamicsSummary, DynamicsError> {
        let cfg = DynamicsConfig { arrival_rate: lambda, ..config.clone() };
        Ok(run_dynamics_with_table(&cfg, &table, seed.wrapping_add(j as u64))?.summary)
    };
    #[cfg(feature = "parallel")]
    let points: Vec<DynamicsSummary> = {
        use rayon::prelude::*;
        grid.par_iter().enumerate().map(one).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let points: Vec<DynamicsSummary> = grid.iter().enumerate().map(one).collect::<Result<_, _>>()?;

    let mut max_stable = None;
    let mut first_unstable: Option<f64> = None;
    for p in &points {
        if p.stable {
            if let Some(u) = first_unstable {
                let scan = CapacityScan { points: points.clone(), max_stable };
                return Err(DynamicsError::NonMonotoneStability { unstable: u, stable: p.arrival_rate, scan: Box::new(scan) });
            }
            max_stable = Some(p.arrival_rate);
        } else if first_unstable.is_none() {
            first_unstable = Some(p.arrival_rate);
        }
    }
    Ok(CapacityScan { points, max_stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;

    #[test]
    fn estimate_examples() {
        assert_abs_diff_eq!(estimate_load_split(100.0, 0.2, 500.0, 300), 300.0, epsilon = 1e-12);
        assert_abs_diff_eq!(estimate_load(Some((500.0, 300)), 100.0), 300.0, epsilon = 1e-12);
        assert_eq!(estimate_load(Some((500.0, 500)), 100.0), 100.0);
        assert_eq!(estimate_load(None, 42.0), 42.0);
        assert_eq!(estimate_load(Some((10.0, 50)), 5.0), 0.0);
    }

    #[test]
    fn idle_count_inversion() {
        // 100 cells, p = 0.1, 20 contenders leave 100 · 0.9^20 ≈ 12.16 idle
        let k = contenders_from_idle(12, 100, 0.1).unwrap();
        assert!((k - 20.0).abs() < 0.2, "{k}");
        assert_eq!(contenders_from_idle(100, 100, 0.3), Some(0.0));
        assert!(contenders_from_idle(0, 100, 0.1).unwrap().is_finite());
        assert_eq!(contenders_from_idle(5, 10, 0.0), None);
        assert_eq!(contenders_from_idle(5, 0, 0.5), None);

        assert_abs_diff_eq!(estimate_load_observed(10.0, 0.5, 40.0, Some(25.0), 15), 40.0, epsilon = 1e-12);
        // without an observation it is the plain recursion
        assert_abs_diff_eq!(estimate_load_observed(10.0, 0.5, 40.0, None, 15), estimate_load(Some((40.0, 15)), 10.0), epsilon = 1e-12);
    }

    #[test]
    fn slot_statistics_track_the_backlog() {
        let base = DynamicsConfig { arrival_rate: 15.0, frames: 1500, ..DynamicsConfig::default() };
        let gap = |est: LoadEstimator| {
            let cfg = DynamicsConfig { load_estimator: est, ..base.clone() };
            let table = RmaTable::for_config(&cfg).unwrap();
            let mut state = DynamicsState::default();
            let mut rng = rng_from_seed(4);
            let mut sq = 0.0;
            for _ in 0..cfg.frames {
                let rec = step_frame(&mut state, &cfg, &table, &mut rng);
                // k_hat is formed after this frame's arrivals
                sq += (rec.k_hat - (rec.backlog + rec.departed) as f64).powi(2);
            }
            (sq / cfg.frames as f64).sqrt()
        };
        let observed = gap(LoadEstimator::SlotStatistics);
        let recursive = gap(LoadEstimator::Recursive);
        assert!(observed < 10.0, "rms gap {observed}");
        assert!(observed < recursive, "{observed} vs {recursive}");
    }

    #[test]
    fn rho_inflates_the_estimate() {
        let cfg = DynamicsConfig { arrival_rate: 50.0, rho: 0.1, resource_model: ResourceModel::FixedRbs(10), ..DynamicsConfig::default() };
        let table = RmaTable::for_config(&cfg).unwrap();
        let rec = step_frame(&mut DynamicsState::default(), &cfg, &table, &mut rng_from_seed(0));
        assert_abs_diff_eq!(rec.k_hat, 55.0, epsilon = 1e-9);
    }

    #[test]
    fn rach_examples() {
        let mut rng = rng_from_seed(1);
        assert_eq!(dab_rach_contend(1, 1, 1, 8, &mut rng), vec![0]);
        assert!(dab_rach_contend(2, 1, 5, 1, &mut rng).is_empty());
        assert!(dab_rach_contend(3, 0, 5, 8, &mut rng).is_empty());
        assert!(dab_rach_contend(3, 2, 1, 8, &mut rng).len() <= 1);
    }

    #[test]
    fn rach_singletons_match_closed_form() {
        // n packets on P preambles: E[singletons] = n (1 − 1/P)^(n−1)
        let (n, rbs) = (40usize, 5usize);
        let p = (rbs * 8) as f64;
        let expected = n as f64 * (1.0 - 1.0 / p).powi(n as i32 - 1);
        let runs = 20_000;
        let mut rng = rng_from_seed(2);
        let counts: Vec<f64> = (0..runs).map(|_| dab_rach_contend(n, rbs, usize::MAX, 8, &mut rng).len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / runs as f64;
        let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt();
        assert!((mean - expected).abs() <= 4.0 * sd / (runs as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn idle_system_stays_idle() {
        let cfg = DynamicsConfig { arrival_rate: 0.0, resource_model: ResourceModel::FixedRbs(10), ..DynamicsConfig::default() };
        let table = RmaTable::for_config(&cfg).unwrap();
        let mut state = DynamicsState::default();
        let mut rng = rng_from_seed(0);
        for f in 0..5 {
            let r = step_frame(&mut state, &cfg, &table, &mut rng);
            assert_eq!((r.arrivals, r.admitted, r.resolved, r.backlog), (0, 0, 0, 0));
            assert_eq!(state.frame, f + 1);
        }
        assert_eq!(state.total_delivered, 0);
    }

    #[test]
    fn packets_are_conserved_and_delays_positive() {
        for scheme in [AccessScheme::Rma, AccessScheme::DabFixedRachRbs(10), AccessScheme::DabFixedRachFraction(0.2)] {
            let cfg = DynamicsConfig {
                arrival_rate: 30.0,
                frames: 300,
                scheme,
                resource_model: ResourceModel::UniformRandomRbs { lo: 20, hi: 60 },
                feedback_loss_prob: 0.05,
                ..DynamicsConfig::default()
            };
            let run = run_dynamics(&cfg, 7).unwrap();
            let mut backlog = 0usize;
            for r in &run.records {
                assert_eq!(backlog + r.arrivals, r.backlog + r.departed);
                assert!(r.admitted <= backlog + r.arrivals);
                assert!(r.resolved == 0 || r.delay_sum >= r.resolved as f64);
                assert!((0.0..=1.0).contains(&r.barring));
                backlog = r.backlog;
            }
        }
    }

    #[test]
    fn light_load_is_served_at_once() {
        let cfg = DynamicsConfig { arrival_rate: 2.0, resource_model: ResourceModel::FixedRbs(100), ..DynamicsConfig::default() };
        let run = run_dynamics(&cfg, 3).unwrap();
        assert!(run.summary.stable);
        assert!(run.summary.mean_delay < 1.2, "{}", run.summary.mean_delay);
    }

    #[test]
    fn overload_grows_backlog() {
        let cfg = DynamicsConfig { arrival_rate: 150.0, frames: 2000, resource_model: ResourceModel::FixedRbs(100), ..DynamicsConfig::default() };
        let run = run_dynamics(&cfg, 4).unwrap();
        assert!(run.summary.backlog_slope > 10.0, "{}", run.summary.backlog_slope);
        assert!(!run.summary.stable);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = DynamicsConfig { arrival_rate: 20.0, frames: 200, ..DynamicsConfig::default() };
        let a = run_dynamics(&cfg, 5).unwrap();
        assert_eq!(a, run_dynamics(&cfg, 5).unwrap());
        assert_eq!(a.to_csv(), run_dynamics(&cfg, 5).unwrap().to_csv());
    }

    #[test]
    fn admission_matches_binomial_mean() {
        let mut rng = rng_from_seed(8);
        let (n, b) = (400usize, 0.75);
        let frames = 2000;
        let total: usize = (0..frames).map(|_| admit(n, b, &mut rng).len()).sum();
        let mean = total as f64 / frames as f64;
        let sd = (n as f64 * b * (1.0 - b) / frames as f64).sqrt();
        assert!((mean - 100.0).abs() <= 3.0 * sd, "{mean}");
        assert_eq!(admit(5, 0.0, &mut rng), vec![0, 1, 2, 3, 4]);
        assert!(admit(5, 1.0, &mut rng).is_empty());
    }

    #[test]
    fn config_checks() {
        assert!(DynamicsConfig { frames: 50, ..DynamicsConfig::default() }.validate().is_err());
        assert!(DynamicsConfig { scheme: AccessScheme::DabFixedRachFraction(1.5), ..DynamicsConfig::default() }.validate().is_err());
        assert!(DynamicsConfig { arrival_rate: -1.0, ..DynamicsConfig::default() }.validate().is_err());
        assert!(capacity_scan(&DynamicsConfig::default(), &[2.0, 1.0], 0).is_err());
    }

    #[test]
    fn scan_below_capacity_returns_grid_max() {
        let cfg = DynamicsConfig { resource_model: ResourceModel::FixedRbs(50), ..DynamicsConfig::default() };
        let scan = capacity_scan(&cfg, &[1.0, 3.0, 5.0], 1).unwrap();
        assert_eq!(scan.max_stable, Some(5.0));
        assert_eq!(scan.to_csv().lines().count(), 4);
    }
}
