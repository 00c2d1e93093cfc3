use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Stage of the trait-extraction pipeline an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ExtractPoints,
    Clustering,
    CubeIdentification,
    CubeEdge,
    Scale,
    PlantSelection,
    Height,
    CrownWidth,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::ExtractPoints => "extract-points",
            Stage::Clustering => "clustering",
            Stage::CubeIdentification => "cube-identification",
            Stage::CubeEdge => "cube-edge",
            Stage::Scale => "scale",
            Stage::PlantSelection => "plant-selection",
            Stage::Height => "height",
            Stage::CrownWidth => "crown-width",
        };
        f.write_str(name)
    }
}

/// Coarse error family, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Parse,
    Numerical,
    Pipeline,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("projection failed: {0}")]
    Projection(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: u64, message: String },

    #[error("reference renderer refuses {count} splats (limit {limit})")]
    OracleLimit { count: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: byte offset {offset}: {message}")]
    Binary {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("unsupported camera model `{0}` (only PINHOLE and SIMPLE_PINHOLE are handled)")]
    UnsupportedCameraModel(String),

    #[error("{0}: image has no alpha channel")]
    MissingMask(PathBuf),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("point cloud is empty: {0}")]
    EmptyCloud(String),

    #[error("segmentation failed: {0}")]
    Segmentation(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("no plant cluster besides the calibration cube")]
    PlantMissing,

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self.root() {
            Error::Config(_) | Error::InvalidParameter(_) => ErrorFamily::Config,
            Error::Parse { .. }
            | Error::Binary { .. }
            | Error::UnsupportedCameraModel(_) => ErrorFamily::Parse,
            Error::Numerical { .. } | Error::InvalidSeries(_) => ErrorFamily::Numerical,
            Error::Io { .. } | Error::Image { .. } => ErrorFamily::Io,
            _ => ErrorFamily::Pipeline,
        }
    }
}
