//! Forward synthesis and inverse width reconstruction for slowly varying
//! two-dimensional acoustic waveguides near locally resonant frequencies.

pub mod error;
pub mod special_functions;
pub mod waveguide_model;
pub mod forward_solver;
pub mod airy_fit;
pub mod inversion_pipeline;
pub mod cli_runner;

pub use error::{Error, Result};
