//! Simulation and optimization toolkit for ultrasonic voice-command injection
//! through solid tabletops, and for the universal-perturbation defense that
//! disrupts such injections.
//!
//! The pipeline is modelled end to end: amplitude modulation onto an
//! ultrasonic carrier, dispersive plate propagation, the microphone's
//! quadratic nonlinearity and low-pass, decimation to a 16 kHz stream, and a
//! small CTC word recognizer standing in for a voice assistant.

pub mod attack;
pub mod dispersion;
pub mod error;
pub mod filter;
pub mod locator;
pub mod metrics;
pub mod mic;
pub mod receiver;
pub mod recognizer;
pub mod signal;
pub mod uap;
pub mod wav;

pub use error::{Error, Result};
pub use signal::{SampledSignal, Transcript};
