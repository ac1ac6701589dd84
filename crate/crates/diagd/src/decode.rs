//! Sequential and diagonal decode loops over either model backend.
//!
//! Sampling draws come from a per-coordinate stream: the uniform value for a
//! coordinate depends only on (seed, t, i, j), never on when the coordinate
//! is decoded. Two schedules that produce the same conditional distribution
//! at every coordinate therefore produce bit-identical grids, which is what
//! makes order-equivalence testable.
//!
//! Each diagonal step has two phases. Phase A feeds the previous wavefront's
//! true tokens at their own positions (key/value writes for the transformer
//! backend, a no-op for the local-field oracle). Phase B builds one query
//! per token of the current wavefront - the policy-chosen predecessor's
//! embedding at the raster predecessor's position - and samples. Query-side
//! key/values are never cached, and tokens within a step never see each
//! other.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{Coordinate, GridGeometry, PredecessorPolicy, TokenGrid};
use crate::mixer::{Mixer, DOMAIN_SAMPLE};
use crate::model::{LocalFieldModel, QuerySource, TinyTransformer};
use crate::schedule::Schedule;
use crate::visibility::{predecessor, ContextView};

/// How tokens are chosen from conditional distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Greedy,
    /// Inverse-CDF draws from the per-coordinate stream.
    Stochastic,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Sampling::Greedy),
            "stochastic" => Ok(Sampling::Stochastic),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampling mode '{other}' (expected greedy or stochastic)"
            ))),
        }
    }
}

/// Model backend reference for the decode loops.
#[derive(Clone, Copy)]
pub enum ModelRef<'a> {
    LocalField(&'a LocalFieldModel),
    Transformer(&'a TinyTransformer),
}

impl<'a> ModelRef<'a> {
    fn check(&self, geom: &GridGeometry) -> Result<()> {
        match self {
            ModelRef::LocalField(m) => {
                if m.vocab() != geom.vocab {
                    return Err(Error::ModelMismatch(format!(
                        "grid vocabulary {} != model vocabulary {}",
                        geom.vocab,
                        m.vocab()
                    )));
                }
                Ok(())
            }
            // begin() revalidates, but fail early with the same error.
            ModelRef::Transformer(m) => m.begin(geom).map(|_| ()),
        }
    }

    pub fn spec_json(&self) -> Value {
        match self {
            ModelRef::LocalField(m) => m.spec_json(),
            ModelRef::Transformer(m) => m.spec_json(),
        }
    }
}

/// Step accounting for one decode run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeReport {
    /// Forward passes consumed: T*h*w sequentially, total_steps diagonally.
    pub steps: usize,
    /// Tokens produced at each step.
    pub widths: Vec<usize>,
}

/// Uniform draw in [0, 1) for one coordinate; independent of decode order.
pub fn sample_stream(seed: u64, p: Coordinate) -> f64 {
    Mixer::new(seed, DOMAIN_SAMPLE)
        .absorb_i64(p.frame)
        .absorb(p.row as u64)
        .absorb(p.col as u64)
        .unit()
}

fn pick(probs: &[f64], sampling: Sampling, seed: u64, p: Coordinate) -> u32 {
    match sampling {
        Sampling::Greedy => {
            let mut best = 0usize;
            for (i, v) in probs.iter().enumerate() {
                if *v > probs[best] {
                    best = i;
                }
            }
            best as u32
        }
        Sampling::Stochastic => {
            let u = sample_stream(seed, p);
            let mut cum = 0.0f64;
            for (i, v) in probs.iter().enumerate() {
                cum += v;
                if u < cum {
                    return i as u32;
                }
            }
            probs.len() as u32 - 1
        }
    }
}

fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|x| x / sum).collect()
}

fn check_prompt(prompt: &TokenGrid) -> Result<()> {
    if !prompt.is_fresh_prompt() {
        return Err(Error::Domain(
            "decode expects a grid with all prompt cells filled and no generated cells".into(),
        ));
    }
    Ok(())
}

/// Sequential raster-order decoding, one token per step.
pub fn decode_ntp(
    model: ModelRef,
    prompt: &TokenGrid,
    sampling: Sampling,
    seed: u64,
) -> Result<(TokenGrid, DecodeReport)> {
    let geom = *prompt.geometry();
    model.check(&geom)?;
    check_prompt(prompt)?;
    let mut grid = prompt.clone();
    let n = geom.generated_tokens();

    match model {
        ModelRef::LocalField(lfm) => {
            for p in geom.generated_coords() {
                let probs = lfm.conditional(&grid, p, &ContextView::full_prefix(p));
                grid.set_generated(p, pick(&probs, sampling, seed, p))?;
            }
        }
        ModelRef::Transformer(tt) => {
            let mut cache = tt.begin(&geom)?;
            let mut pending: Option<Vec<f32>> = None;
            for c in geom.prompt_coords() {
                let id = grid.value(c).expect("prompt cell filled");
                let logits = tt.feed_wavefront(&mut cache, &[(c, id)])?;
                pending = logits.into_iter().next();
            }
            for (idx, p) in geom.generated_coords().enumerate() {
                let logits = match pending.take() {
                    Some(l) => l,
                    // No prompt and nothing fed yet: query from the start
                    // embedding at the first position over an empty context.
                    None => tt.query(&cache, QuerySource::Start, p)?,
                };
                let probs = softmax_f64(&logits);
                let tok = pick(&probs, sampling, seed, p);
                grid.set_generated(p, tok)?;
                if idx + 1 < n {
                    let out = tt.feed_wavefront(&mut cache, &[(p, tok)])?;
                    pending = out.into_iter().next();
                }
            }
        }
    }

    Ok((
        grid,
        DecodeReport {
            steps: n,
            widths: vec![1; n],
        },
    ))
}

/// Diagonal decoding along the schedule's wavefronts.
pub fn decode_diagd(
    model: ModelRef,
    prompt: &TokenGrid,
    sched: &Schedule,
    policy: PredecessorPolicy,
    sampling: Sampling,
    seed: u64,
) -> Result<(TokenGrid, DecodeReport)> {
    let geom = *prompt.geometry();
    if geom != *sched.geometry() {
        return Err(Error::ModelMismatch(
            "schedule and prompt grid disagree on geometry".into(),
        ));
    }
    model.check(&geom)?;
    check_prompt(prompt)?;
    let mut grid = prompt.clone();
    let total = sched.total_steps();
    let mut widths = Vec::with_capacity(total);

    match model {
        ModelRef::LocalField(lfm) => {
            for step in 1..=total {
                let front = sched.wavefront(step)?;
                widths.push(front.len());
                // Same-step parents fail the visibility check whether or not
                // they are already written, so in-place writes are safe.
                for &p in front {
                    let probs = lfm.conditional(&grid, p, &ContextView::scheduled(sched, p));
                    grid.set_generated(p, pick(&probs, sampling, seed, p))?;
                }
            }
        }
        ModelRef::Transformer(tt) => {
            let mut cache = tt.begin(&geom)?;
            for c in geom.prompt_coords() {
                let id = grid.value(c).expect("prompt cell filled");
                tt.feed_wavefront(&mut cache, &[(c, id)])?;
            }
            for step in 1..=total {
                if step > 1 {
                    let fed: Vec<(Coordinate, u32)> = sched
                        .wavefront(step - 1)?
                        .iter()
                        .map(|&c| (c, grid.value(c).expect("previous wavefront sampled")))
                        .collect();
                    tt.feed_wavefront(&mut cache, &fed)?;
                }
                let front = sched.wavefront(step)?;
                widths.push(front.len());
                for &p in front {
                    let raster_pred = predecessor(sched, p, PredecessorPolicy::Raster)?;
                    let policy_pred = predecessor(sched, p, policy)?;
                    let at = raster_pred.unwrap_or(p);
                    let source = match policy_pred {
                        Some(q) => QuerySource::Token(grid.value(q).ok_or_else(|| {
                            Error::Internal(format!(
                                "predecessor (t={}, i={}, j={}) not yet decoded",
                                q.frame, q.row, q.col
                            ))
                        })?),
                        None => QuerySource::Start,
                    };
                    let logits = tt.query(&cache, source, at)?;
                    let probs = softmax_f64(&logits);
                    grid.set_generated(p, pick(&probs, sampling, seed, p))?;
                }
            }
        }
    }

    Ok((
        grid,
        DecodeReport {
            steps: total,
            widths,
        },
    ))
}

/// Grid JSON artifact: config header plus row-major ids per frame.
pub fn grid_json(
    grid: &TokenGrid,
    header: &crate::grid::ConfigHeader,
    report: Option<&DecodeReport>,
) -> Value {
    let geom = grid.geometry();
    let first = -(geom.prompt_frames as i64);
    let frames: Vec<Value> = (first..geom.frames as i64)
        .map(|t| {
            json!({
                "frame": t,
                "prompt": t < 0,
                "ids": grid.frame_ids(t),
            })
        })
        .collect();
    let mut out = json!({
        "config": header,
        "frames": frames,
    });
    if let Some(r) = report {
        out["report"] = json!({ "steps": r.steps, "widths": r.widths });
    }
    out
}
