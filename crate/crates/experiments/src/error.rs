use std::path::{Path, PathBuf};

use thiserror::Error;
use zk_core::functionals::FunctionalError;
use zk_core::linop::LinopError;
use zk_core::modulation::ModulationError;
use zk_core::zk_solver::SolverError;
use zk_core::{GridError, GroundStateError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure{}: {message}", at_time(*.t))]
    Numerical { t: Option<f64>, message: String },
    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn at_time(t: Option<f64>) -> String {
    t.map(|t| format!(" at t = {t}")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

impl ExperimentError {
    /// Process exit code: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Numerical { .. } => 3,
            ExperimentError::Io { .. } => 4,
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        ExperimentError::Numerical {
            t: None,
            message: message.into(),
        }
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<GridError> for ExperimentError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io { path, source } => ExperimentError::Io {
                path: path.into(),
                source,
            },
            other => ExperimentError::numerical(other.to_string()),
        }
    }
}

impl From<SolverError> for ExperimentError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::BadConfig(m) => ExperimentError::Config(m),
            SolverError::AboveCeiling { .. } => ExperimentError::Config(e.to_string()),
            SolverError::Grid(g) => g.into(),
            SolverError::NonFinite { t } | SolverError::MassSentinel { t, .. } | SolverError::Probe { t, .. } => {
                ExperimentError::Numerical {
                    t: Some(t),
                    message: e.to_string(),
                }
            }
        }
    }
}

impl From<FunctionalError> for ExperimentError {
    fn from(e: FunctionalError) -> Self {
        match e {
            FunctionalError::Io { path, source } => ExperimentError::Io {
                path: path.into(),
                source,
            },
            FunctionalError::AngleOutOfRange(_) | FunctionalError::BadScale(_) => ExperimentError::Config(e.to_string()),
            FunctionalError::Grid(g) => g.into(),
            other => ExperimentError::numerical(other.to_string()),
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ExperimentError {
            fn from(e: $t) -> Self {
                ExperimentError::numerical(e.to_string())
            }
        }
    )*};
}

numerical_from!(GroundStateError, LinopError, ModulationError);

impl From<toml::de::Error> for ExperimentError {
    fn from(e: toml::de::Error) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for ExperimentError {
    fn from(e: serde_json::Error) -> Self {
        ExperimentError::Config(e.to_string())
    }
}
