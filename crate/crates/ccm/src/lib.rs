//! Link-level simulator for massive MIMO channel covariance reconstruction.
//!
//! The library models a base station with a uniform linear array that
//! estimates uplink channels from shared-pilot observations, extracts angle
//! and power-angular-spectrum information from a single instantaneous
//! estimate, rebuilds uplink/downlink covariance matrices with a family of
//! interchangeable reconstruction schemes, and feeds those matrices into
//! MMSE channel estimators. The experiment harness runs seeded Monte Carlo
//! sweeps and emits CSV metrics.

pub mod angle;
pub mod array;
pub mod channel;
pub mod downlink;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod pas;
pub mod recon;
pub mod scheduler;
pub mod uplink;

pub use error::{Error, Result};
pub use numerics::{CMat, CVec};
