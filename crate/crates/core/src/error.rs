use std::path::PathBuf;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// No linear-acceleration sample reached the trigger threshold.
    #[error("no sample reaches the {threshold_g} g trigger (peak {peak_g:.3} g)")]
    NoTrigger { threshold_g: f64, peak_g: f64 },

    #[error("simulation stays below the {threshold_g} g trigger (peak {peak_g:.3} g)")]
    BelowTrigger { threshold_g: f64, peak_g: f64 },

    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("numerical blow-up at integration step {step} (t = {time:.6} s)")]
    NumericalBlowup { step: usize, time: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("synthetic pool too small: {required} events required, {available} available")]
    InsufficientSynthetic { required: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("architecture hash mismatch: model file has {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("unlabeled event file {}", .0.display())]
    Unlabeled(PathBuf),

    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },

    #[error("incomplete results: missing cells {0:?}")]
    IncompleteResults(Vec<String>),

    #[error("cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::File {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable identifier for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NoTrigger { .. } => "no_trigger",
            Error::BelowTrigger { .. } => "below_trigger",
            Error::Parse { .. } => "parse",
            Error::NumericalBlowup { .. } => "numerical_blowup",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InsufficientSynthetic { .. } => "insufficient_synthetic",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Divergence { .. } => "divergence",
            Error::ArchitectureMismatch { .. } => "architecture_mismatch",
            Error::Unlabeled(_) => "unlabeled",
            Error::File { .. } => "file",
            Error::IncompleteResults(_) => "incomplete_results",
            Error::Cell { .. } => "cell_failure",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
