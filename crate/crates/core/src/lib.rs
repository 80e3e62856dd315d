//! Flux-pulse characterization through a dispersive SQUID transducer.
//!
//! A flux-tunable LC resonator maps on-chip flux to the phase of a reflected
//! microwave tone. This crate models the transducer, the AWG that drives it,
//! the homodyne readout, and the estimators used to recover calibration and
//! settling parameters from measured phase traces.

pub mod circuit;
pub mod error;
pub mod estimators;
pub mod signalchain;
pub mod waveforms;

pub use error::{Error, Result};
