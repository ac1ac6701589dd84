//! Error type shared across the crate.

use std::fmt;

use crate::grid::Coordinate;

/// Errors produced by grid, schedule, model, and decode operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Coordinate does not lie inside its geometry.
    OutOfBounds {
        coord: Coordinate,
        context: &'static str,
    },
    /// Rejected geometry or (k, d) configuration.
    InvalidConfig(String),
    /// Dense matrix would exceed the configured position cap.
    ResourceCap { positions: usize, cap: usize },
    /// Operation applied to the wrong kind of coordinate or input.
    Domain(String),
    /// Model and geometry (or schedule) do not agree.
    ModelMismatch(String),
    /// Operation is not defined for this model backend.
    UnsupportedBackend(String),
    /// Broken internal invariant; indicates a bug, not a caller error.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::OutOfBounds { coord, context } => {
                write!(
                    f,
                    "coordinate (t={}, i={}, j={}) out of bounds: {}",
                    coord.frame, coord.row, coord.col, context
                )
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::ResourceCap { positions, cap } => {
                write!(
                    f,
                    "{positions} positions exceed the dense-matrix cap of {cap}"
                )
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::ModelMismatch(msg) => write!(f, "model mismatch: {msg}"),
            Error::UnsupportedBackend(msg) => write!(f, "unsupported backend: {msg}"),
            Error::Internal(msg) => write!(f, "internal invariant violated: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
