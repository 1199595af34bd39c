use aerial_parse::metrics::MetricsError;
use aerial_parse::model::ModelError;
use aerial_parse::parser::ParseError;
use aerial_parse::raster::RasterError;
use aerial_parse::segmentation::SegmentError;
use aerial_parse::synthdata::SynthError;
use aerial_parse::taxonomy::TaxonomyError;
use thiserror::Error;

/// Failure of one command, tagged with the stage that raised it.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Numeric { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Mismatch { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Internal { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Data { .. } => 3,
            CliError::Numeric { .. } => 4,
            CliError::Mismatch { .. } => 5,
        }
    }

    pub fn data(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Data {
            stage,
            message: e.to_string(),
        }
    }

    pub fn mismatch(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Mismatch {
            stage,
            message: e.to_string(),
        }
    }

    pub fn from_model(stage: &'static str, e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::Config(_) => CliError::Config(message),
            ModelError::Numeric { .. } => CliError::Numeric { stage, message },
            ModelError::IncompatibleCheckpoint(_) => CliError::Mismatch { stage, message },
            ModelError::Data(_) | ModelError::Io { .. } | ModelError::FormatVersion(_) | ModelError::Checksum(_) => {
                CliError::Data { stage, message }
            }
            ModelError::Tensor(_) | ModelError::Fusion(_) => CliError::Internal { stage, message },
        }
    }

    pub fn from_parse(e: ParseError) -> Self {
        let message = e.to_string();
        match e {
            ParseError::Config(_) => CliError::Config(message),
            ParseError::Segment(SegmentError::Config(_)) => CliError::Config(message),
            ParseError::ExtentMismatch(_) | ParseError::OutOfBounds { .. } => CliError::Data { stage: "parse", message },
            ParseError::Raster(_) | ParseError::Io { .. } | ParseError::Segment(_) => {
                CliError::Data { stage: "parse", message }
            }
            ParseError::Classifier { .. } | ParseError::Fusion(_) => CliError::Internal { stage: "parse", message },
        }
    }

    pub fn from_segment(e: SegmentError) -> Self {
        match e {
            SegmentError::Config(m) => CliError::Config(format!("segmentation: {m}")),
            e => CliError::data("segment", e),
        }
    }

    pub fn from_synth(e: SynthError) -> Self {
        match e {
            SynthError::Config(m) => CliError::Config(format!("synth: {m}")),
            e => CliError::data("synth", e),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        CliError::data("raster", e)
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::data("taxonomy", e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::data("eval", e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
