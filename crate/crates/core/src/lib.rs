//! Linear structural causal bandits with adversarially deviating weights.

pub mod ascent;
pub mod audit;
pub mod config;
pub mod deviation;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod policy;
pub mod presets;
pub mod sem;
pub mod theory;

pub use error::{Error, Result};
