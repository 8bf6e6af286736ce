//! Simulation and analysis of intensity-resolved ionization yields in a
//! focused Gaussian beam.
//!
//! Units throughout: µm for beam lengths, W/cm² for intensity, fs for pulse
//! times, eV for energies. The TOF model uses mm, V, u, e and µs.

pub mod beam;
pub mod config;
pub mod curvefile;
pub mod deconv;
pub mod error;
pub mod fitkit;
pub mod focalavg;
pub mod ionmodel;
pub mod numeric;
pub mod tofmap;

pub use error::{Error, Result};
