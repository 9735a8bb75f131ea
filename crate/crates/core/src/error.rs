use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("trial too short: task {task} needs {needed} steps, trial length is {trial_len}")]
    TrialTooShort {
        task: usize,
        needed: usize,
        trial_len: usize,
    },

    #[error("unknown task: {0}")]
    UnknownTask(String),

    #[error("task {task} has not been encountered by the task model")]
    UnseenTask { task: usize },

    #[error("zero likelihood at t={t} for task {task}")]
    ZeroLikelihood { t: usize, task: usize },

    #[error("slot exhaustion: no free {kind} slot left (capacity {capacity}); raise the slot count")]
    SlotExhausted { kind: &'static str, capacity: usize },

    #[error("context {0} is already allocated")]
    AlreadyAllocated(usize),

    #[error("gating at t={t} puts no mass on allocated contexts")]
    NoAllocatedMass { t: usize },

    #[error("non-finite hidden state at t={t}")]
    NonFinite { t: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the command line front-end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::UnknownTask(_) | Error::TrialTooShort { .. } => "config",
            Error::Checkpoint(_) | Error::Json(_) => "checkpoint",
            Error::Io { .. } | Error::Csv(_) => "io",
            Error::Plot(_) => "plot",
            _ => "runtime",
        }
    }
}
