//! File formats, pipeline drivers and the command-line front end of the
//! neurodegeneration simulator.

pub mod atomic;
pub mod cli;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod stats;

pub use error::{Error, Result};
