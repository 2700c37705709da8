use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants split into validation failures (bad inputs, bad configuration)
/// and runtime failures; [`Error::is_validation`] drives CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty record")]
    EmptyRecord,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("degenerate task: training split contains a single class")]
    DegenerateTask,
    #[error("feature statistics have not been fitted")]
    StatsNotFitted,
    #[error("attention mask row {0} allows no keys")]
    EmptyMaskRow(usize),
    #[error("non-finite loss at step {step} (batch segments: {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<String> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-provided inputs or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyRecord
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::UnknownConfigKey(_)
                | Error::MissingFile(_)
                | Error::DegenerateTask
                | Error::StatsNotFitted
                | Error::Json(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyRecord => "empty_record",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "config",
            Error::UnknownConfigKey(_) => "unknown_config_key",
            Error::MissingFile(_) => "missing_file",
            Error::DegenerateTask => "degenerate_task",
            Error::StatsNotFitted => "stats_not_fitted",
            Error::EmptyMaskRow(_) => "empty_mask_row",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
