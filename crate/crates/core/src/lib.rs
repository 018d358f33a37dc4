//! Evacuation of a double-deck railcar through narrowed exits.

pub mod campaign;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod population;
pub mod refdata;
pub mod rng;
pub mod sensitivity;

pub use error::{Error, Result};
