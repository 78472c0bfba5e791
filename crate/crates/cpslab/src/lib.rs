//! Simulation and analysis of networked control systems with a plant-side
//! residual generator and a remote monitoring and control station.

pub mod error;
pub mod attacks;
pub mod factory;
pub mod mcstation;
pub mod plantside;
pub mod robotino;
pub mod scenario;
pub mod sscore;
pub mod stats;

pub use error::{Error, Result};
