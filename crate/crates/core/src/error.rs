use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("cell count below minimum: axis {axis} has {count} cells (need at least {minimum})")]
    CellCountBelowMinimum {
        axis: usize,
        count: usize,
        minimum: usize,
    },

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("density {density} at node {node} {position:?} leaves the admissible band (0, 2)")]
    DensityOutOfBand {
        node: usize,
        position: [f64; 3],
        density: f64,
    },

    #[error("density {0} outside the admissible band (0, 2)")]
    DensityDomain(f64),

    #[error("invalid physical parameters: {0}")]
    InvalidParameters(String),

    #[error("Krylov solver did not converge in {iterations} iterations (best relative residual {best_residual:.3e})")]
    KrylovNotConverged {
        iterations: usize,
        best_residual: f64,
    },

    #[error("inner split iteration did not converge in {sweeps} sweeps (last change {last_change:.3e})")]
    InnerNotConverged { sweeps: usize, last_change: f64 },

    #[error("transport field leaves the forward-progress regime: {0}")]
    TransportRegime(String),

    #[error("characteristic stalled from {start:?} after {steps} steps")]
    CharacteristicStalled { start: [f64; 3], steps: usize },

    #[error("CFL condition violated (number {number:.3}); refine n1")]
    CflViolation { number: f64 },

    #[error("Picard iteration did not converge: {0}")]
    NotConverged(String),

    #[error("too short history: {0}")]
    ShortHistory(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config validation error at `{key}`: {message}")]
    ConfigValidation { key: String, message: String },

    #[error("malformed field dump {path}: {message}")]
    MalformedDump { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable snake_case name of the variant, used in structured reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::CellCountBelowMinimum { .. } => "cell_count_below_minimum",
            Error::InvalidNorm(_) => "invalid_norm",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::DensityOutOfBand { .. } => "density_out_of_band",
            Error::DensityDomain(_) => "density_domain",
            Error::InvalidParameters(_) => "invalid_parameters",
            Error::KrylovNotConverged { .. } => "krylov_not_converged",
            Error::InnerNotConverged { .. } => "inner_not_converged",
            Error::TransportRegime(_) => "transport_regime",
            Error::CharacteristicStalled { .. } => "characteristic_stalled",
            Error::CflViolation { .. } => "cfl_violation",
            Error::NotConverged(_) => "not_converged",
            Error::ShortHistory(_) => "short_history",
            Error::ConfigParse { .. } => "config_parse",
            Error::ConfigValidation { .. } => "config_validation",
            Error::MalformedDump { .. } => "malformed_dump",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
