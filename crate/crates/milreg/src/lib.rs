//! Files, experiments and the command line around `milreg-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod formats;
pub mod heatmaps;
pub mod plot;
pub mod report;
pub mod run;
