use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the workflow. Variant names double as the stable
/// error identifiers printed by the command-line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error("MissingFile: {0}")]
    MissingFile(PathBuf),
    #[error("MalformedHeader: {0}")]
    MalformedHeader(String),
    #[error("MissingGeoSidecar: {0}")]
    MissingGeoSidecar(PathBuf),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("IoFailure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("InvalidGeoTransform: {0}")]
    InvalidGeoTransform(String),
    #[error("InvalidProbability: {0}")]
    InvalidProbability(String),
    #[error("MalformedGeoJson: {0}")]
    MalformedGeoJson(String),
    #[error("UnknownClassName: {0}")]
    UnknownClassName(String),
    #[error("DegeneratePolygon: {0}")]
    DegeneratePolygon(String),
    #[error("SelfIntersectingPolygon: {0}")]
    SelfIntersectingPolygon(String),
    #[error("EmptyGrid: width and height must be at least 1")]
    EmptyGrid,
    #[error("MissingClass: no training pixels for {0}")]
    MissingClass(String),
    #[error("ZeroProbability: sample {0} assigns zero probability to its label")]
    ZeroProbability(usize),
    #[error("EmptyBatch: batch must contain at least one sample")]
    EmptyBatch,
    #[error("OutOfBounds: pixel ({col}, {row}) outside {width}x{height} raster")]
    OutOfBounds {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },
    #[error("NonFiniteLoss: loss diverged at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, losses: Vec<f64> },
    #[error("GeometryMismatch: {0}")]
    GeometryMismatch(String),
    #[error("EmptyReference: reference area set is empty")]
    EmptyReference,
    #[error("PlacementFailure: {0}")]
    PlacementFailure(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("MalformedCsv: {0}")]
    MalformedCsv(String),
    #[error("MalformedJson: {0}")]
    MalformedJson(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier of the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "MissingFile",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::MissingGeoSidecar(_) => "MissingGeoSidecar",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::IoFailure(_) => "IoFailure",
            Error::InvalidGeoTransform(_) => "InvalidGeoTransform",
            Error::InvalidProbability(_) => "InvalidProbability",
            Error::MalformedGeoJson(_) => "MalformedGeoJson",
            Error::UnknownClassName(_) => "UnknownClassName",
            Error::DegeneratePolygon(_) => "DegeneratePolygon",
            Error::SelfIntersectingPolygon(_) => "SelfIntersectingPolygon",
            Error::EmptyGrid => "EmptyGrid",
            Error::MissingClass(_) => "MissingClass",
            Error::ZeroProbability(_) => "ZeroProbability",
            Error::EmptyBatch => "EmptyBatch",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::GeometryMismatch(_) => "GeometryMismatch",
            Error::EmptyReference => "EmptyReference",
            Error::PlacementFailure(_) => "PlacementFailure",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MalformedCsv(_) => "MalformedCsv",
            Error::MalformedJson(_) => "MalformedJson",
        }
    }

    /// Whether the error stems from invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingFile(_)
                | Error::MalformedHeader(_)
                | Error::MissingGeoSidecar(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidGeoTransform(_)
                | Error::MalformedGeoJson(_)
                | Error::UnknownClassName(_)
                | Error::DegeneratePolygon(_)
                | Error::SelfIntersectingPolygon(_)
                | Error::EmptyGrid
                | Error::InvalidConfig(_)
                | Error::MalformedCsv(_)
                | Error::MalformedJson(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
