use alloc::string::String;

/// Failures raised by the registration core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate point cloud: {0}")]
    Degenerate(&'static str),
    #[error("quaternion is not unit length (norm {0})")]
    NonUnitQuaternion(f64),
    #[error("matrix is not a proper rotation (deviation {0})")]
    NotARotation(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("loss must be a scalar, got shape {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("node {0} has no neighbors")]
    EmptyNeighborhood(usize),
    #[error("coincident coordinates on edge ({0}, {1})")]
    CoincidentEdge(usize, usize),
    #[error("every similarity row was invalidated")]
    NoValidRows,
    #[error("quaternion output norm {0} below floor")]
    QuaternionUnderflow(f64),
    #[error("training diverged at epoch {epoch}, pair {pair}: {detail}")]
    Diverged { epoch: usize, pair: usize, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl core::fmt::Display, found: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::ShapeMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
