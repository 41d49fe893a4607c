//! Experiment orchestration: configuration, synthetic worlds, runs and
//! reports.

pub mod config;
pub mod report;
pub mod run;
pub mod synth;

use thiserror::Error;

use crate::calibrate::CalibrateError;
use crate::corpus::CorpusError;
use crate::forecast::ForecastError;
use crate::gateway::{BackendError, GatewayError, PromptError};
use crate::metrics::MetricsError;
use crate::regress::RegressError;

pub use config::{BackendSpec, ExperimentConfig, Method, SignalKind, TaskKind};
pub use report::{emit_report, Report};
pub use run::{load_run, persist_run, run_experiment, RunRecord};
pub use synth::{synth_world, SyntheticWorld};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error("dialogue {dialogue_id:?}: prompt: {source}")]
    Prompt {
        dialogue_id: String,
        #[source]
        source: PromptError,
    },
    #[error("dialogue {dialogue_id:?}, stage {stage}: {source}")]
    Stage {
        dialogue_id: String,
        stage: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("backend: {0}")]
    Backend(BackendError),
    #[error("fitting {stage}: {source}")]
    Fit {
        stage: String,
        #[source]
        source: RegressError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("run record: {0}")]
    Record(String),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Backend(_) | HarnessError::Gateway(_) => EXIT_BACKEND,
            HarnessError::Forecast(ForecastError::Gateway(_)) => EXIT_BACKEND,
            HarnessError::Stage { source, .. } => source.exit_code(),
            _ => EXIT_OTHER,
        }
    }
}
