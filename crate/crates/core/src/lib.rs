pub mod breath;
pub mod cli;
pub mod dsp;
pub mod engine;
pub mod error;
pub mod physio;
pub mod pipeline;
pub mod simloop;
pub mod stats;
pub mod streams;

pub use error::{Error, Result};
