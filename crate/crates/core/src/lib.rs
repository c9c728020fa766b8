//! Link-level simulation of a 5G user equipment operating through an emulated
//! low-Earth-orbit satellite.
//!
//! The crate is organised bottom-up:
//!
//! - [`orbit`]: circular-orbit pass geometry (slant range, elevation, delay, Doppler).
//! - [`waveform`]: IQ buffers, NR PSS synthesis and channel impairments.
//! - [`ue_sync`]: downlink acquisition with a bank of CFO-shifted correlators.
//! - [`ue_comp`]: UE-side delay pre-compensation and uplink Doppler bookkeeping.
//! - [`payload`]: transparent / regenerative relay and the frequency plan.
//! - [`harness`]: scenario configuration, Monte Carlo sweeps, end-to-end runs
//!   and metrics export.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod orbit;
pub mod payload;
pub mod ue_comp;
pub mod ue_sync;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;
