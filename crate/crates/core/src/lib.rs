//! Direct adaptive feedforward rejection of multi-sinusoidal disturbances
//! with known frequencies acting on an unknown stable discrete-time plant.

pub mod adaptation;
pub mod config;
pub mod error;
pub mod excitation;
pub mod lti;
pub mod regressor;
pub mod simulator;
pub mod synthesis;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
