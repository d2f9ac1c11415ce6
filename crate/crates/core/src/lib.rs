pub mod agent;
pub mod belief;
pub mod config;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod nn;
pub mod norm;
pub mod selfcheck;
pub mod shield;
pub mod sim;

pub use error::{Error, Result};
