//! Token-grid geometry, coordinates, and decode configuration.
//!
//! A grid holds `prompt_frames + frames` frames of `height x width` tokens.
//! Prompt frames carry negative frame indices (`-prompt_frames..0`) and are
//! fully visible to every generated token; generated frames are indexed
//! `0..frames`. Raster order is left-to-right, top-to-bottom, frame-by-frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixer::{Mixer, DOMAIN_PROMPT};

/// One token position: frame (negative for prompt frames), row, column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coordinate {
    pub frame: i64,
    pub row: usize,
    pub col: usize,
}

impl Coordinate {
    pub fn new(frame: i64, row: usize, col: usize) -> Self {
        Coordinate { frame, row, col }
    }

    /// Coordinate shifted by a (frame, row, col) offset; `None` when the
    /// row or column would go negative.
    pub fn offset(self, dt: i64, di: i64, dj: i64) -> Option<Coordinate> {
        let row = self.row as i64 + di;
        let col = self.col as i64 + dj;
        if row < 0 || col < 0 {
            return None;
        }
        Some(Coordinate::new(self.frame + dt, row as usize, col as usize))
    }
}

/// Shape of the token grid: generated frames, per-frame token rows/columns,
/// prompt-frame count, and vocabulary size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub prompt_frames: usize,
    pub vocab: u32,
}

impl GridGeometry {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        prompt_frames: usize,
        vocab: u32,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "frames, height, and width must all be at least 1 (got {frames}, {height}, {width})"
            )));
        }
        if vocab < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must have at least 2 ids (got {vocab})"
            )));
        }
        Ok(GridGeometry {
            frames,
            height,
            width,
            prompt_frames,
            vocab,
        })
    }

    /// Tokens per frame, n = h * w.
    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    /// Generated tokens, N = T * h * w.
    pub fn generated_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    /// All positions including prompt frames, M = (P + T) * h * w.
    pub fn total_positions(&self) -> usize {
        (self.prompt_frames + self.frames) * self.tokens_per_frame()
    }

    pub fn contains(&self, c: Coordinate) -> bool {
        c.frame >= -(self.prompt_frames as i64)
            && c.frame < self.frames as i64
            && c.row < self.height
            && c.col < self.width
    }

    pub fn is_generated(&self, c: Coordinate) -> bool {
        self.contains(c) && c.frame >= 0
    }

    pub fn is_prompt(&self, c: Coordinate) -> bool {
        self.contains(c) && c.frame < 0
    }

    /// Raster index over generated tokens only: t*h*w + i*w + j, a bijection
    /// onto [0, N). Rejects prompt and out-of-bounds coordinates.
    pub fn raster_index(&self, c: Coordinate) -> Result<usize> {
        if !self.is_generated(c) {
            return Err(Error::OutOfBounds {
                coord: c,
                context: "generated raster index",
            });
        }
        Ok(c.frame as usize * self.tokens_per_frame() + c.row * self.width + c.col)
    }

    /// Inverse of [`raster_index`](Self::raster_index).
    pub fn raster_coord(&self, index: usize) -> Result<Coordinate> {
        if index >= self.generated_tokens() {
            return Err(Error::Domain(format!(
                "raster index {index} out of range 0..{}",
                self.generated_tokens()
            )));
        }
        let n = self.tokens_per_frame();
        let frame = (index / n) as i64;
        let rem = index % n;
        Ok(Coordinate::new(frame, rem / self.width, rem % self.width))
    }

    /// Raster index over all positions, prompt frames first:
    /// (t + P)*h*w + i*w + j, a bijection onto [0, M).
    pub fn global_index(&self, c: Coordinate) -> Result<usize> {
        if !self.contains(c) {
            return Err(Error::OutOfBounds {
                coord: c,
                context: "global raster index",
            });
        }
        let shifted = (c.frame + self.prompt_frames as i64) as usize;
        Ok(shifted * self.tokens_per_frame() + c.row * self.width + c.col)
    }

    /// Inverse of [`global_index`](Self::global_index).
    pub fn global_coord(&self, index: usize) -> Result<Coordinate> {
        if index >= self.total_positions() {
            return Err(Error::Domain(format!(
                "global index {index} out of range 0..{}",
                self.total_positions()
            )));
        }
        let n = self.tokens_per_frame();
        let frame = (index / n) as i64 - self.prompt_frames as i64;
        let rem = index % n;
        Ok(Coordinate::new(frame, rem / self.width, rem % self.width))
    }

    /// Generated coordinates in raster order.
    pub fn generated_coords(&self) -> impl Iterator<Item = Coordinate> + '_ {
        (0..self.generated_tokens()).map(move |i| self.raster_coord(i).expect("index in range"))
    }

    /// Prompt coordinates in raster order (earliest prompt frame first).
    pub fn prompt_coords(&self) -> impl Iterator<Item = Coordinate> + '_ {
        let n = self.tokens_per_frame();
        (0..self.prompt_frames * n).map(move |i| self.global_coord(i).expect("index in range"))
    }
}

/// Which already-generated token seeds the query that predicts a new token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredecessorPolicy {
    /// Previous token in decoding order (left neighbor / previous row).
    Raster,
    /// Same position in the previous frame, falling back to raster.
    Temporal,
}

impl std::str::FromStr for PredecessorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(PredecessorPolicy::Raster),
            "temporal" => Ok(PredecessorPolicy::Temporal),
            other => Err(Error::InvalidConfig(format!(
                "unknown predecessor policy '{other}' (expected raster or temporal)"
            ))),
        }
    }
}

/// Temporal overlap between consecutive frames' generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalDelay {
    /// Start the next frame `d` steps after the previous one.
    Overlap(usize),
    /// No cross-frame overlap; frames are scheduled back to back
    /// (equivalent to d = s_spa).
    SpatialOnly,
}

/// Diagonal decoding configuration: spatial window k, temporal delay d,
/// and predecessor policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagConfig {
    pub k: usize,
    pub delay: TemporalDelay,
    pub policy: PredecessorPolicy,
}

impl DiagConfig {
    pub fn new(k: usize, delay: TemporalDelay, policy: PredecessorPolicy) -> Self {
        DiagConfig { k, delay, policy }
    }

    /// Cross-frame overlap with explicit delay d.
    pub fn temporal(k: usize, d: usize, policy: PredecessorPolicy) -> Self {
        DiagConfig::new(k, TemporalDelay::Overlap(d), policy)
    }

    /// Spatial-only decoding (frames back to back).
    pub fn spatial(k: usize, policy: PredecessorPolicy) -> Self {
        DiagConfig::new(k, TemporalDelay::SpatialOnly, policy)
    }

    pub fn is_temporal(&self) -> bool {
        matches!(self.delay, TemporalDelay::Overlap(_))
    }
}

/// Per-frame step count s_spa = (h - 1) * k + w.
pub fn spatial_steps(geom: &GridGeometry, k: usize) -> usize {
    (geom.height - 1) * k + geom.width
}

/// Resolved quantities reported by [`validate_config`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigSummary {
    /// Per-frame step count for the given k.
    pub s_spa: usize,
    /// Effective temporal delay (equals s_spa in spatial-only mode).
    pub effective_d: usize,
}

/// Checks k against [1, w] and d against [1, s_spa]; reports s_spa and the
/// effective delay on success.
pub fn validate_config(geom: &GridGeometry, cfg: &DiagConfig) -> Result<ConfigSummary> {
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if cfg.k > geom.width {
        return Err(Error::InvalidConfig(format!(
            "k = {} exceeds frame width w = {} (k = w already reproduces raster order)",
            cfg.k, geom.width
        )));
    }
    let s_spa = spatial_steps(geom, cfg.k);
    let effective_d = match cfg.delay {
        TemporalDelay::SpatialOnly => s_spa,
        TemporalDelay::Overlap(d) => {
            if d == 0 {
                return Err(Error::InvalidConfig("d must be at least 1".into()));
            }
            if d > s_spa {
                return Err(Error::InvalidConfig(format!(
                    "d = {d} exceeds s_spa = {s_spa} (= (h-1)*k + w for k = {})",
                    cfg.k
                )));
            }
            d
        }
    };
    Ok(ConfigSummary { s_spa, effective_d })
}

/// Flat JSON header embedded in every exported artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigHeader {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub prompt_frames: usize,
    pub vocab: u32,
    pub k: usize,
    pub d: usize,
    pub temporal: bool,
    pub policy: PredecessorPolicy,
}

impl ConfigHeader {
    pub fn new(geom: &GridGeometry, cfg: &DiagConfig) -> Result<Self> {
        let summary = validate_config(geom, cfg)?;
        Ok(ConfigHeader {
            frames: geom.frames,
            height: geom.height,
            width: geom.width,
            prompt_frames: geom.prompt_frames,
            vocab: geom.vocab,
            k: cfg.k,
            d: summary.effective_d,
            temporal: cfg.is_temporal(),
            policy: cfg.policy,
        })
    }

    /// Reconstructs the geometry and configuration described by the header.
    pub fn to_parts(&self) -> Result<(GridGeometry, DiagConfig)> {
        let geom = GridGeometry::new(
            self.frames,
            self.height,
            self.width,
            self.prompt_frames,
            self.vocab,
        )?;
        let delay = if self.temporal {
            TemporalDelay::Overlap(self.d)
        } else {
            TemporalDelay::SpatialOnly
        };
        let cfg = DiagConfig::new(self.k, delay, self.policy);
        validate_config(&geom, &cfg)?;
        Ok((geom, cfg))
    }
}

/// Provenance of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Empty,
    Prompt,
    Generated,
}

/// Vocabulary ids over (frame, row, col), including prompt frames, with
/// per-cell provenance. Cells are write-once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    geometry: GridGeometry,
    values: Vec<u32>,
    states: Vec<CellState>,
}

impl TokenGrid {
    pub fn new(geometry: GridGeometry) -> Self {
        let m = geometry.total_positions();
        TokenGrid {
            geometry,
            values: vec![0; m],
            states: vec![CellState::Empty; m],
        }
    }

    /// Grid with every prompt cell filled by `fill`.
    pub fn with_prompt(geometry: GridGeometry, fill: impl Fn(Coordinate) -> u32) -> Result<Self> {
        let mut grid = TokenGrid::new(geometry);
        let prompts: Vec<Coordinate> = geometry.prompt_coords().collect();
        for c in prompts {
            grid.set_prompt(c, fill(c))?;
        }
        Ok(grid)
    }

    /// Grid whose prompt tokens are drawn deterministically from `seed`.
    pub fn seeded_prompt(geometry: GridGeometry, seed: u64) -> Self {
        let vocab = geometry.vocab as u64;
        TokenGrid::with_prompt(geometry, |c| {
            let word = Mixer::new(seed, DOMAIN_PROMPT)
                .absorb_i64(c.frame)
                .absorb(c.row as u64)
                .absorb(c.col as u64)
                .finish();
            (word % vocab) as u32
        })
        .expect("prompt fill is in-bounds by construction")
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn set_prompt(&mut self, c: Coordinate, id: u32) -> Result<()> {
        if !self.geometry.is_prompt(c) {
            return Err(Error::OutOfBounds {
                coord: c,
                context: "prompt cell write",
            });
        }
        self.write(c, id, CellState::Prompt)
    }

    pub fn set_generated(&mut self, c: Coordinate, id: u32) -> Result<()> {
        if !self.geometry.is_generated(c) {
            return Err(Error::OutOfBounds {
                coord: c,
                context: "generated cell write",
            });
        }
        self.write(c, id, CellState::Generated)
    }

    fn write(&mut self, c: Coordinate, id: u32, state: CellState) -> Result<()> {
        if id >= self.geometry.vocab {
            return Err(Error::Domain(format!(
                "token id {id} outside vocabulary of size {}",
                self.geometry.vocab
            )));
        }
        let idx = self.geometry.global_index(c)?;
        if self.states[idx] != CellState::Empty {
            return Err(Error::Internal(format!(
                "cell (t={}, i={}, j={}) written twice",
                c.frame, c.row, c.col
            )));
        }
        self.values[idx] = id;
        self.states[idx] = state;
        Ok(())
    }

    /// Token id at `c`, or `None` if out of bounds or still empty.
    pub fn value(&self, c: Coordinate) -> Option<u32> {
        let idx = self.geometry.global_index(c).ok()?;
        match self.states[idx] {
            CellState::Empty => None,
            _ => Some(self.values[idx]),
        }
    }

    pub fn state(&self, c: Coordinate) -> Option<CellState> {
        let idx = self.geometry.global_index(c).ok()?;
        Some(self.states[idx])
    }

    /// True when every prompt cell is filled and no generated cell is.
    pub fn is_fresh_prompt(&self) -> bool {
        self.geometry
            .prompt_coords()
            .all(|c| self.state(c) == Some(CellState::Prompt))
            && self
                .geometry
                .generated_coords()
                .all(|c| self.state(c) == Some(CellState::Empty))
    }

    /// True when no cell is empty.
    pub fn is_complete(&self) -> bool {
        self.states.iter().all(|s| *s != CellState::Empty)
    }

    /// Fraction of generated cells that hold equal ids in both grids.
    pub fn agreement(&self, other: &TokenGrid) -> f64 {
        assert_eq!(self.geometry, other.geometry, "grids must share geometry");
        let n = self.geometry.generated_tokens();
        let matching = self
            .geometry
            .generated_coords()
            .filter(|c| self.value(*c) == other.value(*c))
            .count();
        matching as f64 / n as f64
    }

    /// Row-major ids of one frame; `None` when any cell is empty.
    pub fn frame_ids(&self, frame: i64) -> Option<Vec<u32>> {
        let g = &self.geometry;
        if frame < -(g.prompt_frames as i64) || frame >= g.frames as i64 {
            return None;
        }
        let mut out = Vec::with_capacity(g.tokens_per_frame());
        for row in 0..g.height {
            for col in 0..g.width {
                out.push(self.value(Coordinate::new(frame, row, col))?);
            }
        }
        Some(out)
    }
}
