//! Decode-order scheduling for autoregressive token grids.
//!
//! Autoregressive video models emit one token per forward pass in raster
//! order. Because neighboring patches correlate far more strongly than
//! raster-sequential ones, tokens along anti-diagonals can be decoded in
//! parallel, and the top-left of the next frame can start before the
//! current frame finishes. This crate implements that reordering as a
//! schedule: a bijection between grid coordinates and generation steps,
//! controlled by a spatial window `k` and a temporal delay `d`.
//!
//! On top of the schedule sit:
//!
//! - exact step-count and speedup arithmetic ([`schedule`]);
//! - visibility sets, predecessor mapping, and the dense attention mask
//!   used to finetune a model into the diagonal order ([`visibility`]);
//! - two desk-scale backends, a local-field oracle with exact conditionals
//!   and a seeded toy transformer with a write-once KV cache ([`model`]);
//! - sequential and diagonal decode loops with order-independent sampling
//!   ([`decode`]);
//! - divergence metrics and a two-parameter wall-clock cost model
//!   ([`analysis`]).

pub mod analysis;
pub mod decode;
pub mod error;
pub mod grid;
pub mod mixer;
pub mod model;
pub mod schedule;
pub mod visibility;

pub use error::{Error, Result};
pub use grid::{
    validate_config, ConfigHeader, ConfigSummary, Coordinate, DiagConfig, GridGeometry,
    PredecessorPolicy, TemporalDelay, TokenGrid,
};
pub use schedule::{build_schedule, preset, speedup, step_count, Preset, Schedule, SpeedupReport};
pub use visibility::{
    build_finetune_mask, build_finetune_mask_capped, predecessor, visible_set, ContextView,
    MaskOrder, VisibilityMask, DEFAULT_MAX_POSITIONS,
};
