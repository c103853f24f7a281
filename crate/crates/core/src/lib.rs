//! Pulse-level simulation and training of an end-to-end quantum classifier
//! for handwritten digits.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod model;
pub mod par;
pub mod pulses;
pub mod readout;
mod serde_inf;
pub mod training;

pub use error::{Error, Result};
