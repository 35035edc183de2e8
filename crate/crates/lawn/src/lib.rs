//! Scenario files, batch experiments and result files around `lawn_core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
