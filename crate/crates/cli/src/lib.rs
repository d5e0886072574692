//! Config-driven runner for the tristack pipeline.
//!
//! Each subcommand is one stage: `synth` writes a cohort, `train` fits the
//! preprocessing and eight models per task, `tune` runs a randomized grid
//! search, `evaluate` scores held-out rows with bootstrap intervals,
//! `explain` writes attributions and plots, and `report` collects the
//! results. All outputs live under one run directory whose
//! `manifest.json` maps every file to its SHA-256.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod presets;

use std::fmt;

/// A failed command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Invalid or unreadable configuration (exit 2).
    Config(String),
    /// Anything that fails while running a stage (exit 1).
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<tristack::Error> for Failure {
    fn from(e: tristack::Error) -> Self {
        match e {
            tristack::Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}
