//! Stage-by-stage driver for exceedance-probability studies: input fits,
//! surrogate fit and tuning, posterior simulation, and plot-ready reports.

use std::path::Path;

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{PipelineConfig, Setting};
pub use pipeline::{run_all, run_stage, Outcome, Stage};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage {stage} needs the output of {dependency}; run `relgp {dependency}` first")]
    MissingDependency { stage: String, dependency: String },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: relgp_core::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }

    pub fn core(context: impl Into<String>) -> impl FnOnce(relgp_core::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Core { context, source }
    }

    /// Process exit code: 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => 3,
            _ => 2,
        }
    }
}
