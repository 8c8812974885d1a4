//! Razumikhin-type control certificates for time-delay systems: delayed
//! history buffers, Lyapunov/barrier fields, a universal feedback law,
//! Halanay decay rates, a method-of-steps integrator and trajectory checks.

pub mod config;
pub mod controller;
pub mod csv_io;
pub mod delay_state;
pub mod error;
pub mod field;
pub mod halanay;
mod linalg;
pub mod simulator;
pub mod system;
pub mod verifier;

pub use error::{Error, Result};
