use std::fmt;

use crate::attention::KvKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Edit,
    Encode,
    Inversion,
    Blending,
    Generation,
    Decode,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Edit => "edit",
            Stage::Encode => "encode",
            Stage::Inversion => "inversion",
            Stage::Blending => "blending",
            Stage::Generation => "generation",
            Stage::Decode => "decode",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("boundary ring is empty, color statistics are undefined")]
    EmptyRing,

    #[error("mask is empty")]
    EmptyMask,

    #[error("transformed mask is empty, geometry fell outside the frame")]
    EmptyTransformedMask,

    #[error("cannot attend over an empty key set")]
    EmptyKeySet,

    #[error("missing K/V record for {0}")]
    MissingRecord(KvKey),

    #[error("K/V record written twice for {0}")]
    DuplicateRecord(KvKey),

    #[error("non-finite values after {0}")]
    NonFinite(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("image decode/encode failed")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage} stage failed")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn in_stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
