//! Command-line front end for the interphase toolkit: figure sweeps, CSV
//! output, SVG plots and named validation suites.

// `!(x > 0.0)` style comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

pub mod config;
pub mod plot;
pub mod sweep;
pub mod validate;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("plot: {0}")]
    Plot(String),

    #[error("{curve} at sigma2={sigma2}: {source}")]
    Sample {
        sigma2: f64,
        curve: &'static str,
        #[source]
        source: interphase_core::Error,
    },

    #[error("unknown suite {name:?}; known suites: {known}")]
    UnknownSuite { name: String, known: String },

    #[error(transparent)]
    Core(#[from] interphase_core::Error),
}

/// Thread count from the environment, if set.
pub const THREADS_ENV: &str = "INTERPHASE_THREADS";
