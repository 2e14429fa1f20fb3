//! One frame of slotted random access with per-subframe SIC and ACKs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::TransmissionGraph;
use crate::qos::{access_probability, AccessMatrix, MatrixError, ValidatedScenario};

/// What happens to fresh replicas of a device that is already decoded but
/// did not receive its ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AckLossMode {
    /// The receiver knows the packet and cancels the replicas on arrival.
    #[default]
    Optimistic,
    /// The replicas stay in the graph as interference until decoded again.
    Pessimistic,
}

/// How per-device access probabilities are obtained in each subframe.
#[derive(Debug, Clone, PartialEq)]
pub enum AccessRule {
    /// p_i^(s) = g_i^(s) / (number of group-i devices still active).
    Load(AccessMatrix),
    /// p_i^(s) given directly.
    Probability(Vec<Vec<f64>>),
}

/// Everything needed to simulate a frame, independent of the randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSetup {
    pub subframe_slots: Vec<usize>,
    pub device_group: Vec<usize>,
    /// `allowed[s][i]`: group i may transmit in subframe s.
    pub allowed: Vec<Vec<bool>>,
    pub rule: AccessRule,
    pub feedback_loss_prob: f64,
    pub ack_loss_mode: AckLossMode,
}

impl FrameSetup {
    pub fn new(scn: &ValidatedScenario, g: &AccessMatrix) -> Result<FrameSetup, MatrixError> {
        g.check_pattern(scn)?;
        Ok(Self::base(scn, AccessRule::Load(g.clone())))
    }

    /// Fixed access probabilities instead of a load matrix.
    pub fn with_probabilities(scn: &ValidatedScenario, p: Vec<Vec<f64>>) -> Result<FrameSetup, MatrixError> {
        let r = scn.num_groups();
        if p.len() != r || p.iter().any(|row| row.len() != r) {
            return Err(MatrixError::Shape { expected: r, rows: p.len() });
        }
        for (s, row) in p.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(MatrixError::InvalidEntry { subframe: s, group: i, value: v });
                }
            }
        }
        Ok(Self::base(scn, AccessRule::Probability(p)))
    }

    fn base(scn: &ValidatedScenario, rule: AccessRule) -> FrameSetup {
        let r = scn.num_groups();
        let device_group = scn.group_sizes().iter().enumerate().flat_map(|(i, &n)| std::iter::repeat_n(i, n)).collect();
        FrameSetup {
            subframe_slots: scn.subframe_slots.clone(),
            device_group,
            allowed: (0..r).map(|s| (0..r).map(|i| scn.may_transmit(s, i)).collect()).collect(),
            rule,
            feedback_loss_prob: scn.scenario().feedback_loss_prob,
            ack_loss_mode: AckLossMode::default(),
        }
    }

    pub fn with_ack_loss_mode(mut self, mode: AckLossMode) -> FrameSetup {
        self.ack_loss_mode = mode;
        self
    }

    pub fn num_groups(&self) -> usize {
        self.allowed.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.num_groups()];
        for &i in &self.device_group {
            n[i] += 1;
        }
        n
    }
}

/// Source of the frame's random decisions.
pub trait FrameRandomness {
    /// Pushes the offsets in `0..n` of the slots used by a device that
    /// transmits independently in each slot with probability `p`.
    fn transmit_slots(&mut self, n: usize, p: f64, out: &mut Vec<usize>);
    /// True with probability `p`.
    fn coin(&mut self, p: f64) -> bool;
}

/// Adapter drawing from an `rand::Rng`. Transmission slots are drawn by
/// geometric skipping, so the cost is proportional to the edge count.
pub struct RngSource<'a, R: Rng>(pub &'a mut R);

impl<R: Rng> FrameRandomness for RngSource<'_, R> {
    fn transmit_slots(&mut self, n: usize, p: f64, out: &mut Vec<usize>) {
        if p <= 0.0 || n == 0 {
            return;
        }
        if p >= 1.0 {
            out.extend(0..n);
            return;
        }
        let log_q = (-p).ln_1p();
        let mut next = 0usize;
        loop {
            let u: f64 = self.0.random();
            let gap = ((1.0 - u).ln() / log_q).floor() as usize;
            next = next.saturating_add(gap);
            if next >= n {
                return;
            }
            out.push(next);
            next += 1;
        }
    }

    fn coin(&mut self, p: f64) -> bool {
        p >= 1.0 || (p > 0.0 && self.0.random::<f64>() < p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    /// Subframe in which each device was first decoded.
    pub resolved_at: Vec<Option<usize>>,
    /// `unresolved[s][i]`: fraction of group i not decoded by the end of
    /// subframe s (0 for an empty group).
    pub unresolved: Vec<Vec<f64>>,
    /// Packets sent by each device, including cancelled replicas.
    pub transmissions: Vec<usize>,
    /// Devices that missed at least one ACK, ascending.
    pub ack_lost: Vec<usize>,
    pub device_group: Vec<usize>,
    /// SIC rounds used at the end of each subframe.
    pub peel_iterations: Vec<usize>,
}

impl FrameOutcome {
    /// Unresolved fraction of group i at its deadline.
    pub fn deadline_errors(&self) -> Vec<f64> {
        (0..self.unresolved.len()).map(|i| self.unresolved[i][i]).collect()
    }

    /// Mean transmissions per device of each group.
    pub fn mean_transmissions(&self, num_groups: usize) -> Vec<f64> {
        let mut sum = vec![0.0; num_groups];
        let mut n = vec![0usize; num_groups];
        for (d, &i) in self.device_group.iter().enumerate() {
            sum[i] += self.transmissions[d] as f64;
            n[i] += 1;
        }
        sum.iter().zip(&n).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
    }
}

/// Per-group access probability in subframe `s` given the active counts.
fn subframe_probabilities(setup: &FrameSetup, s: usize, active: &[usize]) -> Result<Vec<f64>, MatrixError> {
    (0..setup.num_groups())
        .map(|i| {
            if !setup.allowed[s][i] || active[i] == 0 {
                return Ok(0.0);
            }
            match &setup.rule {
                AccessRule::Probability(p) => Ok(p[s][i]),
                AccessRule::Load(g) => access_probability(g.get(s, i), active[i] as f64)
                    .map_err(|(g, residual)| MatrixError::ProbabilityExceedsOne { subframe: s, group: i, g, residual }),
            }
        })
        .collect()
}

/// Draws the subframe-`s` edges of every listed device into `graph`.
/// Returns the number of edges drawn per device, aligned with `devices`.
pub fn sample_graph(
    graph: &mut TransmissionGraph,
    devices: &[usize],
    probs: &[f64],
    s: usize,
    rand: &mut impl FrameRandomness,
) -> Vec<usize> {
    let range = graph.subframe_range(s);
    let mut buf = Vec::new();
    devices
        .iter()
        .map(|&d| {
            buf.clear();
            rand.transmit_slots(range.len(), probs[graph.device_group()[d]], &mut buf);
            graph.mark_active(d, s);
            for &off in &buf {
                graph.add_edge(d, range.start + off);
            }
            buf.len()
        })
        .collect()
}

/// Simulates one frame. Returns the final graph alongside the outcome.
pub fn simulate_frame(setup: &FrameSetup, rand: &mut impl FrameRandomness) -> Result<(FrameOutcome, TransmissionGraph), MatrixError> {
    let r = setup.num_groups();
    let k = setup.device_group.len();
    let sizes = setup.group_sizes();
    let mut graph = TransmissionGraph::new(&setup.subframe_slots, setup.device_group.clone());
    let mut resolved_at: Vec<Option<usize>> = vec![None; k];
    let mut acked = vec![false; k];
    let mut lost = vec![false; k];
    let mut transmissions = vec![0usize; k];
    let mut unresolved = vec![vec![0.0; r]; r];
    let mut peel_iterations = Vec::with_capacity(r);
    let mut buf = Vec::new();

    for s in 0..r {
        let mut active_count = vec![0usize; r];
        let active: Vec<usize> = (0..k)
            .filter(|&d| !acked[d] && setup.allowed[s][setup.device_group[d]])
            .inspect(|&d| active_count[setup.device_group[d]] += 1)
            .collect();
        let probs = subframe_probabilities(setup, s, &active_count)?;
        let range = graph.subframe_range(s);

        for &d in &active {
            buf.clear();
            rand.transmit_slots(range.len(), probs[setup.device_group[d]], &mut buf);
            graph.mark_active(d, s);
            transmissions[d] += buf.len();
            let known = resolved_at[d].is_some();
            if known && setup.ack_loss_mode == AckLossMode::Optimistic {
                continue;
            }
            for &off in &buf {
                graph.add_edge(d, range.start + off);
            }
        }

        let peeled = graph.peel(range.end);
        peel_iterations.push(peeled.iterations);
        for d in peeled.resolved {
            resolved_at[d].get_or_insert(s);
        }

        // ACK batch to every decoded device still listening.
        for d in 0..k {
            if resolved_at[d].is_some() && !acked[d] {
                if rand.coin(setup.feedback_loss_prob) {
                    lost[d] = true;
                } else {
                    acked[d] = true;
                }
            }
        }

        let mut missing = vec![0usize; r];
        for d in 0..k {
            if resolved_at[d].is_none() {
                missing[setup.device_group[d]] += 1;
            }
        }
        for i in 0..r {
            unresolved[s][i] = if sizes[i] == 0 { 0.0 } else { missing[i] as f64 / sizes[i] as f64 };
        }
    }

    let outcome = FrameOutcome {
        resolved_at,
        unresolved,
        transmissions,
        ack_lost: (0..k).filter(|&d| lost[d]).collect(),
        device_group: setup.device_group.clone(),
        peel_iterations,
    };
    Ok((outcome, graph))
}

/// One frame drawn from `rng`.
pub fn run_frame_with_rng<R: Rng>(setup: &FrameSetup, rng: &mut R) -> Result<FrameOutcome, MatrixError> {
    simulate_frame(setup, &mut RngSource(rng)).map(|(o, _)| o)
}

/// One frame of `scn` under `g`, seeded.
pub fn run_frame(scn: &ValidatedScenario, g: &AccessMatrix, seed: u64) -> Result<FrameOutcome, MatrixError> {
    let setup = FrameSetup::new(scn, g)?;
    run_frame_with_rng(&setup, &mut crate::rng::rng_from_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::{validate_scenario, AckScheme, LatencyMode, Scenario};
    use crate::rng::rng_from_seed;

    fn single(k: usize, n: usize) -> ValidatedScenario {
        validate_scenario(&Scenario::single_group(k, n, 0.5)).unwrap()
    }

    #[test]
    fn sample_trivial() {
        let mut rng = rng_from_seed(1);
        let mut g = TransmissionGraph::new(&[2], vec![0]);
        assert_eq!(sample_graph(&mut g, &[0], &[0.0], 0, &mut RngSource(&mut rng)), vec![0]);
        assert_eq!(sample_graph(&mut g, &[0], &[1.0], 0, &mut RngSource(&mut rng)), vec![2]);
        assert_eq!(g.edges(0), &[0, 1]);
    }

    #[test]
    fn sample_edge_count_is_binomial() {
        // K = 1000 devices, 100 slots, p = 0.5: mean 50000, variance 25000.
        let sd = 25000f64.sqrt();
        for seed in 0..5 {
            let mut rng = rng_from_seed(seed);
            let mut g = TransmissionGraph::new(&[100], vec![0; 1000]);
            let devices: Vec<usize> = (0..1000).collect();
            let total: usize = sample_graph(&mut g, &devices, &[0.5], 0, &mut RngSource(&mut rng)).iter().sum();
            assert!((total as f64 - 50000.0).abs() <= 3.0 * sd, "seed {seed}: {total}");
        }
    }

    #[test]
    fn geometric_skipping_is_uniform_per_slot() {
        let mut rng = rng_from_seed(9);
        let mut src = RngSource(&mut rng);
        let mut hits = [0usize; 5];
        let mut buf = Vec::new();
        let trials = 200_000;
        for _ in 0..trials {
            buf.clear();
            src.transmit_slots(5, 0.3, &mut buf);
            for &o in &buf {
                hits[o] += 1;
            }
        }
        let sd = (trials as f64 * 0.3 * 0.7).sqrt();
        for h in hits {
            assert!((h as f64 - 0.3 * trials as f64).abs() < 4.0 * sd, "{hits:?}");
        }
    }

    #[test]
    fn single_device_always_resolved() {
        let scn = single(1, 1);
        let o = run_frame(&scn, &AccessMatrix::single(1.0), 3).unwrap();
        assert_eq!(o.resolved_at, vec![Some(0)]);
        assert_eq!(o.unresolved, vec![vec![0.0]]);
        assert!(o.ack_lost.is_empty());
        assert_eq!(o.transmissions, vec![1]);
    }

    #[test]
    fn probability_above_one_is_reported() {
        let scn = single(2, 4);
        let err = run_frame(&scn, &AccessMatrix::single(3.0), 0).unwrap_err();
        assert!(matches!(err, MatrixError::ProbabilityExceedsOne { .. }));
    }

    fn two_group(scheme: AckScheme, loss: f64) -> ValidatedScenario {
        let mut s = Scenario::from_fractions(60, 100, &[0.5, 0.5], &[0.6, 1.0], &[0.1, 0.1], scheme);
        s.feedback_loss_prob = loss;
        validate_scenario(&s).unwrap()
    }

    #[test]
    fn outcome_invariants() {
        let scn = two_group(AckScheme::AckAll, 0.3);
        let g = AccessMatrix::from_rows(vec![vec![1.0, 1.5], vec![0.0, 2.0]]).unwrap();
        for mode in [AckLossMode::Optimistic, AckLossMode::Pessimistic] {
            let setup = FrameSetup::new(&scn, &g).unwrap().with_ack_loss_mode(mode);
            for seed in 0..20 {
                let (o, graph) = simulate_frame(&setup, &mut RngSource(&mut rng_from_seed(seed))).unwrap();
                for i in 0..2 {
                    assert!(o.unresolved[0][i] >= o.unresolved[1][i]);
                    assert!((0.0..=1.0).contains(&o.unresolved[1][i]));
                }
                for d in 0..graph.num_devices() {
                    for &slot in graph.edges(d) {
                        assert!(graph.is_active(d, graph.subframe_of_slot(slot)));
                    }
                    if mode == AckLossMode::Pessimistic {
                        assert_eq!(o.transmissions[d], graph.edges(d).len());
                    } else {
                        assert!(o.transmissions[d] >= graph.edges(d).len());
                    }
                    // Strict latency: group 0 never transmits in subframe 1.
                    if o.device_group[d] == 0 {
                        assert!(!graph.is_active(d, 1));
                    }
                }
            }
        }
    }

    #[test]
    fn lossless_feedback_matches_edge_counts() {
        let scn = two_group(AckScheme::AckAll, 0.0);
        let g = AccessMatrix::from_rows(vec![vec![1.0, 1.5], vec![0.0, 2.0]]).unwrap();
        let setup = FrameSetup::new(&scn, &g).unwrap();
        for seed in 0..20 {
            let (o, graph) = simulate_frame(&setup, &mut RngSource(&mut rng_from_seed(seed))).unwrap();
            assert!(o.ack_lost.is_empty());
            for d in 0..graph.num_devices() {
                assert_eq!(o.transmissions[d], graph.edges(d).len());
            }
        }
    }

    #[test]
    fn ack_group_keeps_groups_apart() {
        let scn = two_group(AckScheme::AckGroup, 0.0);
        let g = AccessMatrix::diagonal(&[1.5, 2.0]);
        let setup = FrameSetup::new(&scn, &g).unwrap();
        let (o, graph) = simulate_frame(&setup, &mut RngSource(&mut rng_from_seed(4))).unwrap();
        for d in 0..graph.num_devices() {
            let i = o.device_group[d];
            assert!(graph.edges(d).iter().all(|&slot| graph.subframe_of_slot(slot) == i));
        }
        // group 1 only starts in subframe 1
        assert_eq!(o.unresolved[0][1], 1.0);
    }

    #[test]
    fn flexible_latency_lets_early_groups_continue() {
        let mut s = Scenario::from_fractions(60, 100, &[0.5, 0.5], &[0.6, 1.0], &[0.1, 0.1], AckScheme::AckAll);
        s.latency_mode = LatencyMode::Flexible;
        let scn = validate_scenario(&s).unwrap();
        let g = AccessMatrix::from_rows(vec![vec![1.0, 1.0], vec![0.5, 1.0]]).unwrap();
        let setup = FrameSetup::new(&scn, &g).unwrap();
        let (_, graph) = simulate_frame(&setup, &mut RngSource(&mut rng_from_seed(2))).unwrap();
        assert!((0..graph.num_devices()).any(|d| graph.device_group()[d] == 0 && graph.is_active(d, 1)));
    }

    #[test]
    fn run_frame_is_deterministic() {
        let scn = single(30, 40);
        let g = AccessMatrix::single(2.0);
        assert_eq!(run_frame(&scn, &g, 11).unwrap(), run_frame(&scn, &g, 11).unwrap());
    }
}
