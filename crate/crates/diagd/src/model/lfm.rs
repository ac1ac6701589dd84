//! Local-field oracle: a grid process whose conditional at each position
//! depends only on the values of a declared set of parent offsets.
//!
//! Because the conditional reads nothing but its parents, any two decode
//! orders that agree on the visibility of every parent produce identical
//! distributions at every coordinate. That makes the model an exact oracle
//! for order-equivalence tests: no training, no tolerance.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{Coordinate, TokenGrid};
use crate::mixer::{Mixer, DOMAIN_LFM};
use crate::visibility::ContextView;

/// Relative parent position (dt, di, dj) with dt <= 0; (0, 0, 0) excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParentOffset {
    pub dt: i64,
    pub di: i64,
    pub dj: i64,
}

impl ParentOffset {
    pub const LEFT: ParentOffset = ParentOffset {
        dt: 0,
        di: 0,
        dj: -1,
    };
    pub const UP: ParentOffset = ParentOffset {
        dt: 0,
        di: -1,
        dj: 0,
    };
    pub const PREV: ParentOffset = ParentOffset {
        dt: -1,
        di: 0,
        dj: 0,
    };
    pub const UP_RIGHT: ParentOffset = ParentOffset {
        dt: 0,
        di: -1,
        dj: 1,
    };

    pub fn new(dt: i64, di: i64, dj: i64) -> Result<Self> {
        if dt > 0 {
            return Err(Error::InvalidConfig(format!(
                "parent offset may not reach into future frames (dt = {dt})"
            )));
        }
        if dt == 0 && di == 0 && dj == 0 {
            return Err(Error::InvalidConfig(
                "parent offset (0, 0, 0) would make a token its own parent".into(),
            ));
        }
        Ok(ParentOffset { dt, di, dj })
    }

    /// Parses `left`, `up`, `prev`, `up-right`, or a raw `dt:di:dj` triple.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Self::LEFT),
            "up" => Ok(Self::UP),
            "prev" => Ok(Self::PREV),
            "up-right" | "upright" => Ok(Self::UP_RIGHT),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidConfig(format!(
                        "unknown parent '{other}' (expected left, up, prev, up-right, or dt:di:dj)"
                    )));
                }
                let nums: Vec<i64> = parts
                    .iter()
                    .map(|p| {
                        p.parse::<i64>().map_err(|_| {
                            Error::InvalidConfig(format!("bad parent component '{p}'"))
                        })
                    })
                    .collect::<Result<_>>()?;
                ParentOffset::new(nums[0], nums[1], nums[2])
            }
        }
    }
}

/// Seeded oracle with exact, reproducible conditionals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalFieldModel {
    vocab: u32,
    parents: Vec<ParentOffset>,
    seed: u64,
}

impl LocalFieldModel {
    pub fn new(vocab: u32, parents: Vec<ParentOffset>, seed: u64) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::InvalidConfig(format!(
                "local-field model needs at least 2 vocabulary ids (got {vocab})"
            )));
        }
        Ok(LocalFieldModel {
            vocab,
            parents,
            seed,
        })
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn parents(&self) -> &[ParentOffset] {
        &self.parents
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Reserved id standing for "parent unavailable or out of grid".
    pub fn sentinel(&self) -> u64 {
        self.vocab as u64
    }

    /// Effective value of one parent of `p`: the grid value when the parent
    /// is in bounds and visible under `view`, otherwise the sentinel.
    fn effective_parent(
        &self,
        grid: &TokenGrid,
        view: &ContextView,
        p: Coordinate,
        off: ParentOffset,
    ) -> u64 {
        let geom = grid.geometry();
        let Some(q) = p.offset(off.dt, off.di, off.dj) else {
            return self.sentinel();
        };
        if !view.sees(geom, q) {
            return self.sentinel();
        }
        match grid.value(q) {
            Some(v) => v as u64,
            None => {
                // Visible cells are filled by the time anyone reads them.
                debug_assert!(false, "visible parent cell is empty");
                self.sentinel()
            }
        }
    }

    /// Conditional distribution over the vocabulary at `p`, given the
    /// parents readable under `view`. Logits are unit-interval outputs of
    /// the seeded mixer over (seed, parent values, candidate id).
    pub fn conditional(&self, grid: &TokenGrid, p: Coordinate, view: &ContextView) -> Vec<f64> {
        let mut state = Mixer::new(self.seed, DOMAIN_LFM);
        for off in &self.parents {
            state = state.absorb(self.effective_parent(grid, view, p, *off));
        }
        let logits: Vec<f64> = (0..self.vocab as u64)
            .map(|v| state.absorb(v).unit())
            .collect();
        softmax(&logits)
    }

    /// JSON model spec: kind, seed, vocab, and parent offsets.
    pub fn spec_json(&self) -> Value {
        let parents: Vec<Value> = self
            .parents
            .iter()
            .map(|o| json!([o.dt, o.di, o.dj]))
            .collect();
        json!({
            "kind": "lfm",
            "seed": self.seed,
            "vocab": self.vocab,
            "parents": parents,
        })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|x| x / sum).collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::grid::GridGeometry;

    fn empty_grid() -> TokenGrid {
        TokenGrid::new(GridGeometry::new(2, 3, 3, 0, 4).unwrap())
    }

    #[test]
    fn distributions_normalize() {
        let model = LocalFieldModel::new(7, vec![ParentOffset::LEFT], 99).unwrap();
        let grid = TokenGrid::new(GridGeometry::new(1, 2, 2, 0, 7).unwrap());
        let p = Coordinate::new(0, 0, 0);
        let dist = model.conditional(&grid, p, &ContextView::full_prefix(p));
        assert_eq!(dist.len(), 7);
        let sum: f64 = dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(dist.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn origin_distribution_is_seed_deterministic() {
        let model = LocalFieldModel::new(4, vec![ParentOffset::LEFT, ParentOffset::UP], 7).unwrap();
        let grid = empty_grid();
        let p = Coordinate::new(0, 0, 0);
        let a = model.conditional(&grid, p, &ContextView::full_prefix(p));
        let b = model.conditional(&grid, p, &ContextView::full_prefix(p));
        assert_eq!(a, b);
        let other = LocalFieldModel::new(4, vec![ParentOffset::LEFT, ParentOffset::UP], 8).unwrap();
        assert_ne!(a, other.conditional(&grid, p, &ContextView::full_prefix(p)));
    }

    #[test]
    fn locality_ignores_non_parent_visibility() {
        // Two explicit views that agree on the parent position but differ
        // elsewhere give identical distributions.
        let model = LocalFieldModel::new(4, vec![ParentOffset::LEFT], 11).unwrap();
        let geom = GridGeometry::new(1, 2, 3, 0, 4).unwrap();
        let mut grid = TokenGrid::new(geom);
        for (idx, c) in geom.generated_coords().enumerate() {
            grid.set_generated(c, (idx % 4) as u32).unwrap();
        }
        let p = Coordinate::new(0, 1, 1);
        let left = Coordinate::new(0, 1, 0);
        let far = Coordinate::new(0, 0, 2);
        let small: HashSet<Coordinate> = [left].into_iter().collect();
        let large: HashSet<Coordinate> = [left, far].into_iter().collect();
        let a = model.conditional(&grid, p, &ContextView::explicit(p, &small));
        let b = model.conditional(&grid, p, &ContextView::explicit(p, &large));
        assert_eq!(a, b);
    }

    #[test]
    fn parent_value_changes_distribution() {
        let model = LocalFieldModel::new(4, vec![ParentOffset::LEFT], 7).unwrap();
        let geom = GridGeometry::new(1, 1, 2, 0, 4).unwrap();
        let mut grid = TokenGrid::new(geom);
        grid.set_generated(Coordinate::new(0, 0, 0), 2).unwrap();
        let p = Coordinate::new(0, 0, 1);
        let seen = model.conditional(&grid, p, &ContextView::full_prefix(p));
        // Hide the parent: sentinel replaces value 2.
        let empty: HashSet<Coordinate> = HashSet::new();
        let hidden = model.conditional(&grid, p, &ContextView::explicit(p, &empty));
        let tv: f64 = seen
            .iter()
            .zip(&hidden)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(
            tv > 0.0,
            "total variation must separate value 2 from sentinel"
        );
    }

    #[test]
    fn offset_validation() {
        assert!(ParentOffset::new(1, 0, 0).is_err());
        assert!(ParentOffset::new(0, 0, 0).is_err());
        assert!(ParentOffset::new(-1, 2, -3).is_ok());
        assert_eq!(ParentOffset::parse("left").unwrap(), ParentOffset::LEFT);
        assert_eq!(
            ParentOffset::parse("0:-1:1").unwrap(),
            ParentOffset::UP_RIGHT
        );
        assert!(ParentOffset::parse("diagonal").is_err());
        assert!(ParentOffset::parse("0:0").is_err());
    }

    #[test]
    fn spec_json_shape() {
        let model = LocalFieldModel::new(8, vec![ParentOffset::PREV], 3).unwrap();
        let v = model.spec_json();
        assert_eq!(v["kind"], "lfm");
        assert_eq!(v["vocab"], 8);
        assert_eq!(v["parents"][0], serde_json::json!([-1, 0, 0]));
    }
}
