//! Command-line front end for fluxprobe: config, trace files, scenarios and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod report;
pub mod scenarios;
pub mod tracefile;
