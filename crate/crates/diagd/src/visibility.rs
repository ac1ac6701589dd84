//! Visibility under a schedule: what each token may attend to, which token
//! seeds its prediction query, and the dense attention mask for finetuning.
//!
//! Prompt tokens are visible to every generated token. A generated token q
//! is visible when generating p iff step(q) < step(p); tokens sharing a
//! wavefront never see each other.

use std::collections::HashSet;
use std::io::{self, Write};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{ConfigHeader, Coordinate, GridGeometry, PredecessorPolicy};
use crate::schedule::Schedule;

/// Default cap on dense mask positions (2^16); see `DIAGD_MAX_POSITIONS`.
pub const DEFAULT_MAX_POSITIONS: usize = 1 << 16;

/// Membership oracle for "may p read q" during conditional evaluation.
///
/// Prompt coordinates are always visible. Generated coordinates are checked
/// against the view kind: the full raster prefix (sequential decoding), the
/// schedule's step order (diagonal decoding), or an explicit set.
#[derive(Clone)]
pub enum ContextView<'a> {
    FullPrefix {
        target: Coordinate,
    },
    Scheduled {
        schedule: &'a Schedule,
        target: Coordinate,
    },
    Explicit {
        target: Coordinate,
        set: &'a HashSet<Coordinate>,
    },
}

impl<'a> ContextView<'a> {
    pub fn full_prefix(target: Coordinate) -> Self {
        ContextView::FullPrefix { target }
    }

    pub fn scheduled(schedule: &'a Schedule, target: Coordinate) -> Self {
        ContextView::Scheduled { schedule, target }
    }

    pub fn explicit(target: Coordinate, set: &'a HashSet<Coordinate>) -> Self {
        ContextView::Explicit { target, set }
    }

    pub fn target(&self) -> Coordinate {
        match self {
            ContextView::FullPrefix { target }
            | ContextView::Scheduled { target, .. }
            | ContextView::Explicit { target, .. } => *target,
        }
    }

    /// Whether `q` is readable while generating the view's target.
    pub fn sees(&self, geom: &GridGeometry, q: Coordinate) -> bool {
        if !geom.contains(q) {
            return false;
        }
        if geom.is_prompt(q) {
            return true;
        }
        match self {
            ContextView::FullPrefix { target } => {
                let qi = geom.raster_index(q).expect("generated in-bounds");
                let pi = geom.raster_index(*target).expect("generated in-bounds");
                qi < pi
            }
            ContextView::Scheduled { schedule, target } => {
                let sq = schedule.step_of(q).expect("generated in-bounds");
                let sp = schedule.step_of(*target).expect("generated in-bounds");
                sq < sp
            }
            ContextView::Explicit { set, .. } => set.contains(&q),
        }
    }
}

/// Every coordinate visible when generating `p`: all prompt tokens plus
/// every generated token with a strictly earlier step.
pub fn visible_set(sched: &Schedule, p: Coordinate) -> Result<HashSet<Coordinate>> {
    let geom = sched.geometry();
    if !geom.is_generated(p) {
        return Err(Error::Domain(format!(
            "visibility is defined for generated coordinates only, got frame {}",
            p.frame
        )));
    }
    let step = sched.step_of(p)?;
    let mut out: HashSet<Coordinate> = geom.prompt_coords().collect();
    for front in &sched.wavefronts()[..step - 1] {
        out.extend(front.iter().copied());
    }
    Ok(out)
}

/// The token whose embedding seeds the query that predicts `p`.
///
/// Raster policy walks the decode order: the left neighbor, then the
/// previous row at column k-1, then (at a frame boundary) the latest token
/// of the previous step; at the very start it is the last prompt token.
/// Temporal policy substitutes the same position in the previous generated
/// frame when one exists.
///
/// Returns `None` only when `p` is the first generated token and there are
/// no prompt frames, in which case nothing precedes it.
pub fn predecessor(
    sched: &Schedule,
    p: Coordinate,
    policy: PredecessorPolicy,
) -> Result<Option<Coordinate>> {
    let geom = sched.geometry();
    if !geom.is_generated(p) {
        return Err(Error::Domain(format!(
            "predecessors are defined for generated coordinates only, got frame {}",
            p.frame
        )));
    }

    if policy == PredecessorPolicy::Temporal && p.frame > 0 {
        let prev = Coordinate::new(p.frame - 1, p.row, p.col);
        debug_assert!(sched.step_of(prev)? < sched.step_of(p)?);
        return Ok(Some(prev));
    }

    raster_predecessor(sched, p)
}

fn raster_predecessor(sched: &Schedule, p: Coordinate) -> Result<Option<Coordinate>> {
    let geom = sched.geometry();
    let k = sched.config().k;

    if p.col > 0 {
        return Ok(Some(Coordinate::new(p.frame, p.row, p.col - 1)));
    }
    if p.row > 0 {
        // Latest strictly-earlier token of the previous row; one step back.
        return Ok(Some(Coordinate::new(p.frame, p.row - 1, k - 1)));
    }
    if p.frame == 0 {
        // Start of generation: the last prompt token, if any.
        if geom.prompt_frames == 0 {
            return Ok(None);
        }
        return Ok(Some(Coordinate::new(-1, geom.height - 1, geom.width - 1)));
    }

    // Frame boundary: the token of the previous step with the largest raster
    // index. That step is t*d, reached inside frame t-1 on diagonal d-1.
    let d = sched.effective_d();
    let m = d - 1;
    let row = (m / k).min(geom.height - 1);
    let col = m - k * row;
    debug_assert!(col < geom.width);
    let pred = Coordinate::new(p.frame - 1, row, col);
    debug_assert_eq!(sched.step_of(pred)? + 1, sched.step_of(p)?);
    Ok(Some(pred))
}

/// Row/column ordering for mask export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOrder {
    /// Raster sequence order (prompt frames first).
    Raster,
    /// Generation order: prompt first, then by (step, frame, row, col).
    Schedule,
}

impl std::str::FromStr for MaskOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(MaskOrder::Raster),
            "schedule" => Ok(MaskOrder::Schedule),
            other => Err(Error::InvalidConfig(format!(
                "unknown mask order '{other}' (expected raster or schedule)"
            ))),
        }
    }
}

impl MaskOrder {
    pub fn name(&self) -> &'static str {
        match self {
            MaskOrder::Raster => "raster",
            MaskOrder::Schedule => "schedule",
        }
    }
}

/// Dense boolean attention matrix over raster-ordered positions.
/// bit\[p]\[q] = 1 iff q is visible to p or q = p.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    size: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    header: ConfigHeader,
}

impl VisibilityMask {
    fn zeroed(size: usize, header: ConfigHeader) -> Self {
        let words_per_row = size.div_ceil(64);
        VisibilityMask {
            size,
            words_per_row,
            bits: vec![0; size * words_per_row],
            header,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn header(&self) -> &ConfigHeader {
        &self.header
    }

    #[inline]
    fn set(&mut self, p: usize, q: usize) {
        let idx = p * self.words_per_row + q / 64;
        self.bits[idx] |= 1u64 << (q % 64);
    }

    /// Whether row position `p` may attend to column position `q`
    /// (raster-ordered global indices).
    #[inline]
    pub fn get(&self, p: usize, q: usize) -> bool {
        debug_assert!(p < self.size && q < self.size);
        let idx = p * self.words_per_row + q / 64;
        self.bits[idx] >> (q % 64) & 1 == 1
    }

    /// Number of set bits.
    pub fn popcount(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Exact lower-triangular-plus-diagonal causal mask of the same size,
    /// prompt and generated alike.
    pub fn is_causal(&self) -> bool {
        (0..self.size).all(|p| (0..self.size).all(|q| self.get(p, q) == (q <= p)))
    }

    /// Position permutation realizing the requested export order.
    /// `perm[row] = global raster index`.
    pub fn permutation(&self, sched: &Schedule, order: MaskOrder) -> Vec<usize> {
        let geom = sched.geometry();
        match order {
            MaskOrder::Raster => (0..self.size).collect(),
            MaskOrder::Schedule => {
                let mut keyed: Vec<(usize, usize)> = (0..self.size)
                    .map(|g| {
                        let c = geom.global_coord(g).expect("index in range");
                        let step = if c.frame < 0 {
                            0
                        } else {
                            sched.step_of(c).expect("generated in-bounds")
                        };
                        (step, g)
                    })
                    .collect();
                // Within a step, global index order equals (frame, row, col).
                keyed.sort();
                keyed.into_iter().map(|(_, g)| g).collect()
            }
        }
    }

    /// True when the mask, rows and columns permuted by `perm`, is
    /// lower-triangular with an all-ones diagonal.
    pub fn is_lower_triangular_under(&self, perm: &[usize]) -> bool {
        assert_eq!(perm.len(), self.size);
        for (r, &p) in perm.iter().enumerate() {
            for (c, &q) in perm.iter().enumerate() {
                let bit = self.get(p, q);
                if c == r && !bit {
                    return false;
                }
                if c > r && bit {
                    return false;
                }
            }
        }
        true
    }

    /// Portable bitmap (P1, ASCII) with one line per position in the given
    /// order; rows and columns are permuted together.
    pub fn write_pbm<W: Write>(
        &self,
        out: &mut W,
        sched: &Schedule,
        order: MaskOrder,
    ) -> io::Result<()> {
        let perm = self.permutation(sched, order);
        writeln!(out, "P1")?;
        writeln!(out, "{} {}", self.size, self.size)?;
        let mut line = String::with_capacity(self.size);
        for &p in &perm {
            line.clear();
            for &q in &perm {
                line.push(if self.get(p, q) { '1' } else { '0' });
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// JSON sidecar describing a PBM export.
    pub fn sidecar_json(&self, order: MaskOrder) -> Value {
        json!({
            "config": self.header,
            "order": order.name(),
            "size": self.size,
            "ones": self.popcount(),
        })
    }
}

/// Builds the finetuning attention mask with the default position cap.
pub fn build_finetune_mask(sched: &Schedule) -> Result<VisibilityMask> {
    build_finetune_mask_capped(sched, DEFAULT_MAX_POSITIONS)
}

/// Builds the finetuning attention mask over all (P+T)*h*w raster positions.
///
/// Prompt rows are causal over the prompt block; generated rows attend to
/// every prompt position, themselves, and every strictly earlier step.
pub fn build_finetune_mask_capped(sched: &Schedule, cap: usize) -> Result<VisibilityMask> {
    let geom = sched.geometry();
    let m = geom.total_positions();
    if m > cap {
        return Err(Error::ResourceCap { positions: m, cap });
    }
    let prompt_len = geom.prompt_frames * geom.tokens_per_frame();
    let mut mask = VisibilityMask::zeroed(m, sched.header());

    for p in 0..m {
        if p < prompt_len {
            for q in 0..=p {
                mask.set(p, q);
            }
            continue;
        }
        for q in 0..prompt_len {
            mask.set(p, q);
        }
        mask.set(p, p);
        let cp = geom.global_coord(p)?;
        let sp = sched.step_of(cp)?;
        for q in prompt_len..m {
            let cq = geom.global_coord(q)?;
            if sched.step_of(cq)? < sp {
                mask.set(p, q);
            }
        }
    }
    Ok(mask)
}
