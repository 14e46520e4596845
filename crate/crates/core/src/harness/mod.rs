//! Experiment orchestration: configuration, the validation and sweep runs,
//! CSV export and SVG figures.

pub mod config;
pub mod experiment;
pub mod export;
pub mod gate;
pub mod render;

use std::path::PathBuf;

use thiserror::Error;

use crate::acquisition::AcquisitionError;
use crate::phantom::PhantomError;
use crate::stats::StatsError;

pub use config::ExperimentConfig;
pub use experiment::{
    analyze_series, run_pipeline, run_pixel_sweep, run_validation, Analysis, PipelineError,
    SweepRecord, ValidationReport,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("{context}: {source}")]
    Pipeline {
        context: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}
