//! Discrete-event Monte Carlo simulator and analysis toolkit for a
//! clock-synchronized photon-pair network.
//!
//! The library models a central pulsed pair source feeding two receiver nodes
//! over lossy fiber channels that also carry a co-propagating classical clock,
//! the superconducting detectors and time-to-digital converters at each node,
//! the phase-locked recovery of the distributed clock, and the picosecond
//! pulse-shaping electronics that gate the clock light. The analysis side
//! builds coincidence histograms from recorded time tags and reduces them to
//! coincidence-to-accidental ratios with entanglement-quality bounds.

// Config validation guards are written `!(x >= 0.0)` on purpose: the negated
// form rejects NaN, which `x < 0.0` would silently admit.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod config;
pub mod detector;
pub mod engine;
pub mod error;
pub mod pulsechain;
pub mod qtag;
pub mod seeds;
pub mod source;
pub mod sparse;
pub mod sync;
pub mod timebase;

pub use error::{Error, Result};
pub use timebase::{DurationFs, Timestamp};
