use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid index ({ix}, {iy}, {iz}) out of bounds for resolution {res:?}")]
    OutOfBounds {
        ix: usize,
        iy: usize,
        iz: usize,
        res: [usize; 3],
    },

    #[error("degenerate direction: zero-length vector")]
    DegenerateDirection,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported spherical-harmonics degree {0} (maximum is 4)")]
    UnsupportedDegree(usize),

    #[error("empty observation set")]
    EmptyObservations,

    #[error("no observation with confidence above {min_conf}")]
    NoObservation { min_conf: f64 },

    #[error("degenerate field: total residual weight is zero")]
    DegenerateField,

    #[error("degenerate perturbation result: {0}")]
    DegeneratePerturbation(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("non-finite objective value {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("no surface for any threshold in [{lo}, {hi}]")]
    NoSurface { lo: f64, hi: f64 },

    #[error("{path}: {msg}")]
    Load { path: PathBuf, msg: String },

    #[error("{path}: expected {expected} bytes, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("camera {id}: {msg}")]
    Camera { id: String, msg: String },

    #[error("ply: {0}")]
    Ply(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short machine-readable tag used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "bounds",
            Error::DegenerateDirection => "degenerate-direction",
            Error::InvalidConfig(_) => "config",
            Error::UnsupportedDegree(_) => "sh-degree",
            Error::EmptyObservations | Error::NoObservation { .. } => "no-observation",
            Error::DegenerateField => "degenerate-field",
            Error::DegeneratePerturbation(_) => "degenerate-perturbation",
            Error::EmptyMesh => "empty-mesh",
            Error::EmptyCloud => "empty-cloud",
            Error::NonFinite { .. } => "search",
            Error::NoSurface { .. } => "no-surface",
            Error::Load { .. } | Error::LengthMismatch { .. } => "load",
            Error::Camera { .. } => "camera",
            Error::Ply(_) => "ply",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
