pub mod cli;
pub mod config;
pub mod error;
pub mod fourier;
pub mod kernel;
pub mod numeric;
pub mod spatial;
pub mod stats;
pub mod weights;
