use thiserror::Error;

use crate::detect::model::ModelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Thresholds, grid sizes and similar settings outside their domain.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// A layout region rounds to zero pixels on the given frame.
    #[error("layout too fine: seat {seat_id} collapses to zero pixels on a {width}x{height} frame")]
    LayoutTooFine { seat_id: u32, width: u32, height: u32 },

    #[error("oracle misuse: {0}")]
    OracleMisuse(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("cannot decode image: {0}")]
    Decode(String),

    #[error("cannot encode image: {0}")]
    Encode(String),

    /// A backend failed while processing a frame.
    #[error("frame {frame_id}: {message}")]
    Backend { frame_id: String, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used in machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidLayout(_) => "invalid_layout",
            Error::LayoutTooFine { .. } => "layout_too_fine",
            Error::OracleMisuse(_) => "oracle_misuse",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Argument(_) => "argument",
            Error::Render(_) => "render",
            Error::Decode(_) => "decode",
            Error::Encode(_) => "encode",
            Error::Backend { .. } => "backend",
            Error::Dataset(_) => "dataset",
            Error::Model(e) => e.code(),
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
