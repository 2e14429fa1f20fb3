//! Random multiple access for machine-type devices with per-group deadlines.
//!
//! Devices are split into QoS groups; the frame is split into one subframe
//! per group deadline. In every slot of subframe `s` a still-unacknowledged
//! device of group `i` transmits a replica of its packet with probability
//! `g_i^(s) / |active group i|`, and the base station resolves packets by
//! successive interference cancellation (SIC) at each subframe boundary.
//!
//! * [`qos`]: scenario, access matrix and access probabilities
//! * [`spectrum`], [`evolution`], [`bounds`]: AND-OR tree analysis
//! * [`sic`]: Monte-Carlo frame simulation and the exhaustive oracle
//! * [`design`]: differential-evolution search for the access matrix
//! * [`dynamics`]: multi-frame queueing with access barring
//! * [`config`]: the scenario file format

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod config;
pub mod design;
pub mod dynamics;
pub mod evolution;
pub mod qos;
pub mod rng;
pub mod sic;
pub mod spectrum;
