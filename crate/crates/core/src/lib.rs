//! Distributed sensor self-registration and multitarget tracking with
//! consensus GM-CPHD filters.

pub mod error;
pub mod fusion;
pub mod cli;
pub mod cphd;
pub mod gm;
pub mod metrics;
pub mod output;
pub mod registration;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
