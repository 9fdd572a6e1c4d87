use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("degenerate input to {op}: |divisor| < 1e-12 at flat positions {positions:?}")]
    DegenerateInput {
        op: &'static str,
        positions: Vec<usize>,
    },
    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("{what}: {value} is not divisible by {divisor}")]
    Divisibility {
        what: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid tensor data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("infeasible phantom: {0}")]
    InfeasibleFraction(String),

    #[error("voxel {voxel} is not covered by any region")]
    UncoveredVoxel { voxel: usize },
    #[error("{0} requires a non-empty stage list")]
    EmptyStages(&'static str),
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("class count mismatch: logits have {logits} classes, labels have {labels}")]
    ClassCountMismatch { logits: usize, labels: usize },

    #[error("invalid network plan: {0}")]
    InvalidPlan(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: non-finite loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// NIfTI-1 parse and write failures. Each names the header field at fault.
#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("sizeof_hdr: expected 348 in either byte order, found {0}")]
    BadSizeofHdr(i32),
    #[error("magic: expected \"n+1\\0\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("magic: detached-header files (\"ni1\\0\") are not supported")]
    DetachedHeader,
    #[error("datatype: unsupported code {0} (supported: 2, 4, 16, 64)")]
    UnsupportedDatatype(i16),
    #[error("bitpix: {bitpix} does not match datatype {datatype}")]
    BitpixMismatch { datatype: i16, bitpix: i16 },
    #[error("dim[0]: expected 3 or 4, found {0}")]
    BadRank(i16),
    #[error("{field}: invalid dimension {value}")]
    DimensionOverflow { field: String, value: i64 },
    #[error("vox_offset: {0} is below the 352-byte minimum")]
    BadVoxOffset(f32),
    #[error("pixdim[{index}]: spacing must be positive, found {value}")]
    BadSpacing { index: usize, value: f32 },
    #[error("truncated file: need {expected} bytes for header and voxel data, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("label value {value} at voxel {voxel} does not fit a class id")]
    BadLabel { voxel: usize, value: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
