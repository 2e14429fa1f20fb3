//! Bipartite device/slot graph with incremental peeling.
//!
//! Each slot keeps its live degree and the XOR of the ids of its live
//! devices, so a degree-one slot names its device directly.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionGraph {
    subframe_start: Vec<usize>,
    device_group: Vec<usize>,
    /// Every edge the device ever had, in insertion order.
    edges: Vec<Vec<usize>>,
    /// Edges not yet cancelled.
    live: Vec<Vec<usize>>,
    device_active: Vec<Vec<bool>>,
    slot_degree: Vec<u32>,
    slot_xor: Vec<usize>,
    decoded: Vec<bool>,
}

/// Devices decoded by one call to [`TransmissionGraph::peel`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeelResult {
    pub resolved: Vec<usize>,
    /// Number of cancellation rounds (one round decodes every singleton
    /// visible at its start).
    pub iterations: usize,
}

impl TransmissionGraph {
    pub fn new(subframe_slots: &[usize], device_group: Vec<usize>) -> TransmissionGraph {
        let mut subframe_start = Vec::with_capacity(subframe_slots.len() + 1);
        let mut acc = 0;
        subframe_start.push(0);
        for &n in subframe_slots {
            acc += n;
            subframe_start.push(acc);
        }
        let k = device_group.len();
        TransmissionGraph {
            subframe_start,
            device_group,
            edges: vec![Vec::new(); k],
            live: vec![Vec::new(); k],
            device_active: vec![vec![false; subframe_slots.len()]; k],
            slot_degree: vec![0; acc],
            slot_xor: vec![0; acc],
            decoded: vec![false; k],
        }
    }

    pub fn num_devices(&self) -> usize {
        self.device_group.len()
    }

    pub fn num_slots(&self) -> usize {
        self.slot_degree.len()
    }

    pub fn num_subframes(&self) -> usize {
        self.subframe_start.len() - 1
    }

    /// Global slot range of subframe `s`.
    pub fn subframe_range(&self, s: usize) -> std::ops::Range<usize> {
        self.subframe_start[s]..self.subframe_start[s + 1]
    }

    pub fn subframe_of_slot(&self, slot: usize) -> usize {
        self.subframe_start.partition_point(|&start| start <= slot) - 1
    }

    pub fn device_group(&self) -> &[usize] {
        &self.device_group
    }

    pub fn edges(&self, device: usize) -> &[usize] {
        &self.edges[device]
    }

    pub fn live_edges(&self, device: usize) -> &[usize] {
        &self.live[device]
    }

    pub fn is_active(&self, device: usize, subframe: usize) -> bool {
        self.device_active[device][subframe]
    }

    pub fn mark_active(&mut self, device: usize, subframe: usize) {
        self.device_active[device][subframe] = true;
    }

    pub fn slot_degree(&self, slot: usize) -> u32 {
        self.slot_degree[slot]
    }

    pub fn is_decoded(&self, device: usize) -> bool {
        self.decoded[device]
    }

    /// Adds a live edge. A device that was already decoded becomes
    /// undecoded again: its new replica is interference until peeled.
    pub fn add_edge(&mut self, device: usize, slot: usize) {
        debug_assert!(!self.live[device].contains(&slot));
        self.edges[device].push(slot);
        self.live[device].push(slot);
        self.slot_degree[slot] += 1;
        self.slot_xor[slot] ^= device;
        self.decoded[device] = false;
    }

    /// Marks a device decoded and cancels all of its live edges. Returns the
    /// slots whose degree dropped to one.
    pub fn cancel(&mut self, device: usize) -> Vec<usize> {
        self.decoded[device] = true;
        let mut singles = Vec::new();
        for slot in std::mem::take(&mut self.live[device]) {
            self.slot_degree[slot] -= 1;
            self.slot_xor[slot] ^= device;
            if self.slot_degree[slot] == 1 {
                singles.push(slot);
            }
        }
        singles
    }

    /// Device in a degree-one slot.
    pub fn singleton_device(&self, slot: usize) -> Option<usize> {
        (self.slot_degree[slot] == 1).then(|| self.slot_xor[slot])
    }

    /// Iterative SIC over slots `0..upto`: decode every singleton, cancel
    /// the decoded devices' replicas, repeat until no singleton remains.
    pub fn peel(&mut self, upto: usize) -> PeelResult {
        let mut frontier: Vec<usize> = (0..upto).filter(|&s| self.slot_degree[s] == 1).collect();
        let mut out = PeelResult::default();
        while !frontier.is_empty() {
            out.iterations += 1;
            let mut next = Vec::new();
            for slot in frontier {
                let Some(dev) = self.singleton_device(slot) else { continue };
                if self.decoded[dev] {
                    continue;
                }
                out.resolved.push(dev);
                next.extend(self.cancel(dev).into_iter().filter(|&s| s < upto));
            }
            frontier = next;
        }
        out
    }

    /// Peeling with an explicit work queue processed in the order chosen by
    /// `pick`, which receives the queue length and returns an index. Used to
    /// check that the decoded set does not depend on processing order.
    pub fn peel_with_order(&mut self, upto: usize, mut pick: impl FnMut(usize) -> usize) -> Vec<usize> {
        let mut queue: VecDeque<usize> = (0..upto).filter(|&s| self.slot_degree[s] == 1).collect();
        let mut resolved = Vec::new();
        while !queue.is_empty() {
            let idx = pick(queue.len()) % queue.len();
            let slot = queue.remove(idx).unwrap();
            let Some(dev) = self.singleton_device(slot) else { continue };
            if self.decoded[dev] {
                continue;
            }
            resolved.push(dev);
            queue.extend(self.cancel(dev).into_iter().filter(|&s| s < upto));
        }
        resolved
    }
}
