use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("affine transform is singular (determinant {determinant:e})")]
    SingularTransform { determinant: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("CRS mismatch: {left} vs {right}")]
    CrsMismatch { left: String, right: String },
    #[error("layer has no georeference")]
    MissingGeoreference,
    #[error("CRS {0} is not metric")]
    NonMetricCrs(String),
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("expected a {expected}-band raster, got {actual} bands")]
    BandCount { expected: String, actual: u8 },
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("decode error in {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("malformed world file {path}: {message}")]
    WorldFileMalformed { path: PathBuf, message: String },
    #[error("label {0} is not in the class table")]
    LabelOutOfTable(u8),
    #[error("georeference differs from expected by {offset_m} m")]
    GeoMismatch { offset_m: f64 },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("missing layer: {0}")]
    MissingLayer(String),
    #[error("invalid layer epoch: expected {expected}, got {actual}")]
    EpochMismatch { expected: String, actual: String },
    #[error("tile address z={z} x={x} y={y} is out of range")]
    AddressOutOfRange { z: u32, x: u64, y: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier used in JSON error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::SingularTransform { .. } => "singular_transform",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::CrsMismatch { .. } => "crs_mismatch",
            Error::MissingGeoreference => "missing_georeference",
            Error::NonMetricCrs(_) => "non_metric_crs",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::BandCount { .. } => "band_count",
            Error::FileNotFound(_) => "file_not_found",
            Error::Decode { .. } => "decode_error",
            Error::WorldFileMalformed { .. } => "world_file_malformed",
            Error::LabelOutOfTable(_) => "label_out_of_table",
            Error::GeoMismatch { .. } => "geo_mismatch",
            Error::DuplicateId(_) => "duplicate_id",
            Error::BadRatios(_) => "bad_ratios",
            Error::EmptyBatch => "empty_batch",
            Error::MissingLayer(_) => "missing_layer",
            Error::EpochMismatch { .. } => "epoch_mismatch",
            Error::AddressOutOfRange { .. } => "address_out_of_range",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    /// True for errors caused by the caller's input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
