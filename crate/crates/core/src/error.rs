use thiserror::Error;

/// Errors produced by the geometry, detection and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point maps to infinity (|w| = {0:e})")]
    PointAtInfinity(f64),
    #[error("camera centers coincide; triangulation needs a baseline")]
    DegenerateBaseline,
    #[error("triangulated point has no finite solution")]
    NoFiniteSolution,
    #[error("shape {0} has no template")]
    NoTemplate(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),
    #[error("prediction grid has {found} records, grid spec generates {expected}")]
    MisalignedGrid { expected: usize, found: usize },
    #[error("boundary leaves the patch margin: {0}")]
    OutOfPatch(String),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("no sign with minimum side >= {0} px")]
    NoLargeSign(f64),
    #[error("gave up after {0} regeneration attempts")]
    RegenerationExhausted(usize),
    #[error("invalid crop window: {0}")]
    InvalidWindow(String),
    #[error("point is behind the camera (depth {0:e} m)")]
    BehindCamera(f64),
    #[error("could not place {0} non-overlapping signs")]
    PlacementExhausted(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::PointAtInfinity(_) => "PointAtInfinity",
            Error::DegenerateBaseline => "DegenerateBaseline",
            Error::NoFiniteSolution => "NoFiniteSolution",
            Error::NoTemplate(_) => "NoTemplate",
            Error::InvalidTemplate(_) => "InvalidTemplate",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InconsistentShapes(_) => "InconsistentShapes",
            Error::MisalignedGrid { .. } => "MisalignedGrid",
            Error::OutOfPatch(_) => "OutOfPatch",
            Error::InvalidPatch(_) => "InvalidPatch",
            Error::NoLargeSign(_) => "NoLargeSign",
            Error::RegenerationExhausted(_) => "RegenerationExhausted",
            Error::InvalidWindow(_) => "InvalidWindow",
            Error::BehindCamera(_) => "BehindCamera",
            Error::PlacementExhausted(_) => "PlacementExhausted",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
