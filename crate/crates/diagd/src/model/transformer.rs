//! Seeded toy transformer over token grids.
//!
//! A small pre-norm attention/MLP stack whose weights are a pure function of
//! (shape, weight seed). Positions are encoded additively from factorized
//! sinusoidal codes over (frame, row, column) with distinct frequency bases
//! per axis, so a position carries no trace of when it was decoded. The
//! model exists to exercise mask and KV-cache mechanics, not to be good.
//!
//! Two forward routes are provided and tested against each other:
//! incremental decoding through a write-once [`KvCache`], and a standalone
//! batch forward restricted by an explicit visibility mask. Attention sums
//! always iterate keys in ascending raster position, which makes results
//! independent of feed order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{Coordinate, GridGeometry, TokenGrid};
use crate::schedule::Schedule;
use crate::visibility::{build_finetune_mask_capped, VisibilityMask};

const LN_EPS: f32 = 1e-5;
const FRAME_BASE: f32 = 10_000.0;
const ROW_BASE: f32 = 523.0;
const COL_BASE: f32 = 31.0;

/// Key and value vectors of one position at one layer.
type KvPair = (Vec<f32>, Vec<f32>);

/// Attention observer: (layer, head, query_global, [(key_global, weight)]).
pub type AttentionObserver<'a> = dyn FnMut(usize, usize, usize, &[(usize, f32)]) + 'a;

/// Shape and seed of a [`TinyTransformer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub vocab: u32,
    /// Maximum frames (prompt + generated) a session may address.
    pub max_frames: usize,
    pub max_height: usize,
    pub max_width: usize,
    pub weight_seed: u64,
}

impl TransformerConfig {
    /// Two layers, 64 dims, 4 heads.
    pub fn small(vocab: u32, weight_seed: u64) -> Self {
        TransformerConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            vocab,
            max_frames: 256,
            max_height: 256,
            max_width: 256,
            weight_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerWeights {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    w_up: Vec<f32>,
    w_down: Vec<f32>,
}

/// Deterministic seeded transformer; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyTransformer {
    cfg: TransformerConfig,
    embed: Vec<f32>,
    bos: Vec<f32>,
    layers: Vec<LayerWeights>,
    head: Vec<f32>,
}

/// Embedding source for a prediction query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    /// Embedding of a concrete token id.
    Token(u32),
    /// Start-of-sequence embedding, used when nothing precedes the target.
    Start,
}

impl TinyTransformer {
    pub fn new(cfg: TransformerConfig) -> Result<Self> {
        if cfg.layers == 0 || cfg.heads == 0 || cfg.model_dim == 0 {
            return Err(Error::InvalidConfig(
                "transformer needs at least one layer, head, and dimension".into(),
            ));
        }
        if !cfg.model_dim.is_multiple_of(cfg.heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} must divide evenly into {} heads",
                cfg.model_dim, cfg.heads
            )));
        }
        if !cfg.model_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "model_dim must be even for sinusoidal codes".into(),
            ));
        }
        if cfg.vocab < 2 {
            return Err(Error::InvalidConfig(
                "vocabulary must have at least 2 ids".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.weight_seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid std");
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let d = cfg.model_dim;
        let v = cfg.vocab as usize;
        let embed = draw(v * d);
        let bos = draw(d);
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights {
                wq: draw(d * d),
                wk: draw(d * d),
                wv: draw(d * d),
                wo: draw(d * d),
                w_up: draw(4 * d * d),
                w_down: draw(d * 4 * d),
            })
            .collect();
        let head = draw(v * d);
        Ok(TinyTransformer {
            cfg,
            embed,
            bos,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    /// JSON model spec: kind, seed, vocab, dims.
    pub fn spec_json(&self) -> Value {
        json!({
            "kind": "tt",
            "seed": self.cfg.weight_seed,
            "vocab": self.cfg.vocab,
            "dims": {
                "layers": self.cfg.layers,
                "model_dim": self.cfg.model_dim,
                "heads": self.cfg.heads,
            },
        })
    }

    /// Concatenated weight bytes, for determinism checks.
    pub fn weight_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut push = |v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        push(&self.embed);
        push(&self.bos);
        for l in &self.layers {
            push(&l.wq);
            push(&l.wk);
            push(&l.wv);
            push(&l.wo);
            push(&l.w_up);
            push(&l.w_down);
        }
        push(&self.head);
        out
    }

    fn check_geometry(&self, geom: &GridGeometry) -> Result<()> {
        if geom.vocab != self.cfg.vocab {
            return Err(Error::ModelMismatch(format!(
                "grid vocabulary {} != model vocabulary {}",
                geom.vocab, self.cfg.vocab
            )));
        }
        if geom.prompt_frames + geom.frames > self.cfg.max_frames
            || geom.height > self.cfg.max_height
            || geom.width > self.cfg.max_width
        {
            return Err(Error::ModelMismatch(format!(
                "geometry {}x{}x{} exceeds the model's positional range",
                geom.prompt_frames + geom.frames,
                geom.height,
                geom.width
            )));
        }
        Ok(())
    }

    /// Additive factorized sinusoidal code over (frame, row, column).
    fn positional(&self, geom: &GridGeometry, c: Coordinate) -> Vec<f32> {
        let d = self.cfg.model_dim;
        let axis = |pos: f32, base: f32, out: &mut [f32]| {
            for m in 0..d / 2 {
                let freq = base.powf(2.0 * m as f32 / d as f32);
                let angle = pos / freq;
                out[2 * m] += angle.sin();
                out[2 * m + 1] += angle.cos();
            }
        };
        let mut code = vec![0.0f32; d];
        let shifted_frame = (c.frame + geom.prompt_frames as i64) as f32;
        axis(shifted_frame, FRAME_BASE, &mut code);
        axis(c.row as f32, ROW_BASE, &mut code);
        axis(c.col as f32, COL_BASE, &mut code);
        code
    }

    fn input_vector(&self, geom: &GridGeometry, source: QuerySource, c: Coordinate) -> Vec<f32> {
        let d = self.cfg.model_dim;
        let mut x = self.positional(geom, c);
        let row: &[f32] = match source {
            QuerySource::Token(id) => {
                let id = id as usize;
                &self.embed[id * d..(id + 1) * d]
            }
            QuerySource::Start => &self.bos,
        };
        for (xi, ei) in x.iter_mut().zip(row) {
            *xi += *ei;
        }
        x
    }

    /// Opens a decode session over `geom`.
    pub fn begin(&self, geom: &GridGeometry) -> Result<KvCache> {
        self.check_geometry(geom)?;
        Ok(KvCache::new(*geom, self.cfg.layers))
    }

    /// Runs one position through the stack against `cache`.
    ///
    /// When `fresh` is given, the position's own freshly computed key/value
    /// participates in attention at its sorted place (feeding); otherwise
    /// attention reads cache entries only (querying).
    fn forward_one(
        &self,
        cache: &KvCache,
        source: QuerySource,
        at: Coordinate,
        with_fresh_self: bool,
    ) -> Result<(Vec<KvPair>, Vec<f32>)> {
        let geom = &cache.geometry;
        if !geom.contains(at) {
            return Err(Error::OutOfBounds {
                coord: at,
                context: "transformer position",
            });
        }
        if let QuerySource::Token(id) = source {
            if id >= self.cfg.vocab {
                return Err(Error::Domain(format!("token id {id} outside vocabulary")));
            }
        }
        let self_pos = geom.global_index(at)?;
        let d = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let mut x = self.input_vector(geom, source, at);
        let mut fresh_kv: Vec<KvPair> = Vec::with_capacity(self.cfg.layers);

        for (li, layer) in self.layers.iter().enumerate() {
            let xn = layer_norm(&x);
            let q = matvec(&layer.wq, &xn, d, d);
            let k = matvec(&layer.wk, &xn, d, d);
            let v = matvec(&layer.wv, &xn, d, d);

            let mut attn = vec![0.0f32; d];
            // Keys in ascending raster position; the fresh self slots into
            // its own place so feed order never changes the sum.
            let level = &cache.layers[li];
            let mut keys: Vec<(usize, &[f32], &[f32])> =
                Vec::with_capacity(cache.positions.len() + 1);
            let mut self_inserted = !with_fresh_self;
            for &pos in &cache.positions {
                if !self_inserted && pos > self_pos {
                    keys.push((self_pos, &k, &v));
                    self_inserted = true;
                }
                let entry = level[pos]
                    .as_ref()
                    .expect("occupied positions have entries");
                keys.push((pos, &entry.0, &entry.1));
            }
            if !self_inserted {
                keys.push((self_pos, &k, &v));
            }

            if !keys.is_empty() {
                for h in 0..heads {
                    let hr = h * dh..(h + 1) * dh;
                    let qh = &q[hr.clone()];
                    let mut scores: Vec<f32> = keys
                        .iter()
                        .map(|(_, kk, _)| dot(qh, &kk[hr.clone()]) * scale)
                        .collect();
                    softmax_inplace(&mut scores);
                    for ((_, _, vv), w) in keys.iter().zip(&scores) {
                        for (a, b) in attn[hr.clone()].iter_mut().zip(&vv[hr.clone()]) {
                            *a += w * b;
                        }
                    }
                }
            }

            let proj = matvec(&layer.wo, &attn, d, d);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += *pi;
            }

            let xn2 = layer_norm(&x);
            let up = matvec(&layer.w_up, &xn2, 4 * d, d);
            let acted: Vec<f32> = up.iter().map(|&u| gelu(u)).collect();
            let down = matvec(&layer.w_down, &acted, d, 4 * d);
            for (xi, mi) in x.iter_mut().zip(&down) {
                *xi += *mi;
            }

            if with_fresh_self {
                fresh_kv.push((k, v));
            }
        }

        let xf = layer_norm(&x);
        let logits = matvec(&self.head, &xf, self.cfg.vocab as usize, d);
        Ok((fresh_kv, logits))
    }

    /// Feeds a set of mutually invisible tokens: each is computed against
    /// the cache as it stood before the call, then all are committed.
    /// Returns the output logits of each fed token, in input order.
    pub fn feed_wavefront(
        &self,
        cache: &mut KvCache,
        tokens: &[(Coordinate, u32)],
    ) -> Result<Vec<Vec<f32>>> {
        let mut staged: Vec<(usize, Vec<KvPair>)> = Vec::with_capacity(tokens.len());
        let mut logits_out = Vec::with_capacity(tokens.len());
        for &(c, id) in tokens {
            let pos = cache.geometry.global_index(c)?;
            if cache.is_occupied(pos) || staged.iter().any(|(p, _)| *p == pos) {
                return Err(Error::Internal(format!(
                    "position (t={}, i={}, j={}) fed twice",
                    c.frame, c.row, c.col
                )));
            }
            let (kv, logits) = self.forward_one(cache, QuerySource::Token(id), c, true)?;
            staged.push((pos, kv));
            logits_out.push(logits);
        }
        for (pos, kv) in staged {
            cache.commit(pos, kv);
        }
        Ok(logits_out)
    }

    /// Prediction query at `at`: attends to cached entries only; nothing is
    /// written back.
    pub fn query(&self, cache: &KvCache, source: QuerySource, at: Coordinate) -> Result<Vec<f32>> {
        let (_, logits) = self.forward_one(cache, source, at, false)?;
        Ok(logits)
    }

    /// Standalone batch forward restricted by an explicit visibility mask
    /// over global raster positions. Returns per-input logits in input
    /// order.
    pub fn forward_masked(
        &self,
        geom: &GridGeometry,
        tokens: &[(Coordinate, u32)],
        mask: &VisibilityMask,
    ) -> Result<Vec<Vec<f32>>> {
        self.forward_masked_observed(geom, tokens, mask, &mut |_, _, _, _| {})
    }

    /// As [`forward_masked`](Self::forward_masked), invoking `observe`
    /// with `(layer, head, query_global, &[(key_global, weight)])` for every
    /// attention row.
    pub fn forward_masked_observed(
        &self,
        geom: &GridGeometry,
        tokens: &[(Coordinate, u32)],
        mask: &VisibilityMask,
        observe: &mut AttentionObserver,
    ) -> Result<Vec<Vec<f32>>> {
        self.check_geometry(geom)?;
        if mask.size() != geom.total_positions() {
            return Err(Error::ModelMismatch(format!(
                "mask over {} positions does not cover geometry with {}",
                mask.size(),
                geom.total_positions()
            )));
        }

        // Work in ascending raster position regardless of input order.
        let mut order: Vec<usize> = (0..tokens.len()).collect();
        let globals: Vec<usize> = tokens
            .iter()
            .map(|(c, _)| geom.global_index(*c))
            .collect::<Result<_>>()?;
        order.sort_by_key(|&i| globals[i]);
        for pair in order.windows(2) {
            if globals[pair[0]] == globals[pair[1]] {
                return Err(Error::Domain(
                    "duplicate coordinate in forward input".into(),
                ));
            }
        }

        let d = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let n = tokens.len();

        let mut xs: Vec<Vec<f32>> = order
            .iter()
            .map(|&i| {
                let (c, id) = tokens[i];
                if id >= self.cfg.vocab {
                    return Err(Error::Domain(format!("token id {id} outside vocabulary")));
                }
                Ok(self.input_vector(geom, QuerySource::Token(id), c))
            })
            .collect::<Result<_>>()?;
        let sorted_globals: Vec<usize> = order.iter().map(|&i| globals[i]).collect();

        for (li, layer) in self.layers.iter().enumerate() {
            let normed: Vec<Vec<f32>> = xs.iter().map(|x| layer_norm(x)).collect();
            let qs: Vec<Vec<f32>> = normed.iter().map(|x| matvec(&layer.wq, x, d, d)).collect();
            let ks: Vec<Vec<f32>> = normed.iter().map(|x| matvec(&layer.wk, x, d, d)).collect();
            let vs: Vec<Vec<f32>> = normed.iter().map(|x| matvec(&layer.wv, x, d, d)).collect();

            for qi in 0..n {
                let gq = sorted_globals[qi];
                let allowed: Vec<usize> = (0..n)
                    .filter(|&ki| mask.get(gq, sorted_globals[ki]))
                    .collect();
                let mut attn = vec![0.0f32; d];
                if !allowed.is_empty() {
                    for h in 0..heads {
                        let hr = h * dh..(h + 1) * dh;
                        let qh = &qs[qi][hr.clone()];
                        let mut scores: Vec<f32> = allowed
                            .iter()
                            .map(|&ki| dot(qh, &ks[ki][hr.clone()]) * scale)
                            .collect();
                        softmax_inplace(&mut scores);
                        let row: Vec<(usize, f32)> = allowed
                            .iter()
                            .zip(&scores)
                            .map(|(&ki, &w)| (sorted_globals[ki], w))
                            .collect();
                        observe(li, h, gq, &row);
                        for (&ki, &w) in allowed.iter().zip(&scores) {
                            for (a, b) in attn[hr.clone()].iter_mut().zip(&vs[ki][hr.clone()]) {
                                *a += w * b;
                            }
                        }
                    }
                }
                let proj = matvec(&layer.wo, &attn, d, d);
                for (xi, pi) in xs[qi].iter_mut().zip(&proj) {
                    *xi += *pi;
                }
            }

            for x in xs.iter_mut() {
                let xn2 = layer_norm(x);
                let up = matvec(&layer.w_up, &xn2, 4 * d, d);
                let acted: Vec<f32> = up.iter().map(|&u| gelu(u)).collect();
                let down = matvec(&layer.w_down, &acted, d, 4 * d);
                for (xi, mi) in x.iter_mut().zip(&down) {
                    *xi += *mi;
                }
            }
        }

        let mut out = vec![Vec::new(); n];
        for (si, &input_idx) in order.iter().enumerate() {
            let xf = layer_norm(&xs[si]);
            out[input_idx] = matvec(&self.head, &xf, self.cfg.vocab as usize, d);
        }
        Ok(out)
    }

    /// Mean attention over layers and heads for every query position in one
    /// generated frame of a completed grid, under the schedule's mask.
    pub fn attention_dump(
        &self,
        sched: &Schedule,
        grid: &TokenGrid,
        frame: usize,
    ) -> Result<AttentionDump> {
        self.attention_dump_capped(sched, grid, frame, crate::visibility::DEFAULT_MAX_POSITIONS)
    }

    /// As [`attention_dump`](Self::attention_dump) with an explicit cap on
    /// dense mask positions.
    pub fn attention_dump_capped(
        &self,
        sched: &Schedule,
        grid: &TokenGrid,
        frame: usize,
        cap: usize,
    ) -> Result<AttentionDump> {
        let geom = sched.geometry();
        if frame >= geom.frames {
            return Err(Error::Domain(format!(
                "frame {frame} out of range 0..{}",
                geom.frames
            )));
        }
        if !grid.is_complete() {
            return Err(Error::Domain(
                "attention dump requires a completed grid".into(),
            ));
        }
        let mask = build_finetune_mask_capped(sched, cap)?;
        let m = geom.total_positions();
        let tokens: Vec<(Coordinate, u32)> = (0..m)
            .map(|g| {
                let c = geom.global_coord(g)?;
                Ok((c, grid.value(c).expect("grid is complete")))
            })
            .collect::<Result<_>>()?;

        let n_frame = geom.tokens_per_frame();
        let first = geom.global_index(Coordinate::new(frame as i64, 0, 0))?;
        let mut rows = vec![vec![0.0f64; m]; n_frame];
        let denom = (self.cfg.layers * self.cfg.heads) as f64;
        self.forward_masked_observed(geom, &tokens, &mask, &mut |_, _, gq, row| {
            if gq >= first && gq < first + n_frame {
                let local = gq - first;
                for &(gk, w) in row {
                    rows[local][gk] += w as f64 / denom;
                }
            }
        })?;

        let query_globals: Vec<usize> = (first..first + n_frame).collect();
        Ok(AttentionDump {
            frame,
            query_globals,
            rows,
        })
    }
}

/// Mean attention matrix for one frame's queries over the full context.
#[derive(Debug, Clone)]
pub struct AttentionDump {
    pub frame: usize,
    /// Global raster index of each query row.
    pub query_globals: Vec<usize>,
    /// One row per query, one column per context raster position.
    pub rows: Vec<Vec<f64>>,
}

impl AttentionDump {
    /// CSV with a header row of context raster indices.
    pub fn to_csv(&self) -> String {
        let m = self.rows.first().map_or(0, Vec::len);
        let mut out = String::from("query");
        for k in 0..m {
            out.push(',');
            out.push_str(&k.to_string());
        }
        out.push('\n');
        for (q, row) in self.query_globals.iter().zip(&self.rows) {
            out.push_str(&q.to_string());
            for w in row {
                out.push(',');
                out.push_str(&format!("{w}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Write-once per-position key/value store for one decode session.
#[derive(Debug, Clone)]
pub struct KvCache {
    geometry: GridGeometry,
    /// Per layer, per global position: (key, value).
    layers: Vec<Vec<Option<KvPair>>>,
    /// Occupied global positions, ascending.
    positions: Vec<usize>,
}

impl KvCache {
    fn new(geometry: GridGeometry, n_layers: usize) -> Self {
        let m = geometry.total_positions();
        KvCache {
            geometry,
            layers: vec![vec![None; m]; n_layers],
            positions: Vec::new(),
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_occupied(&self, pos: usize) -> bool {
        self.positions.binary_search(&pos).is_ok()
    }

    fn commit(&mut self, pos: usize, kv: Vec<KvPair>) {
        debug_assert_eq!(kv.len(), self.layers.len());
        for (level, entry) in self.layers.iter_mut().zip(kv) {
            debug_assert!(level[pos].is_none(), "write-once violated");
            level[pos] = Some(entry);
        }
        let at = self.positions.binary_search(&pos).unwrap_err();
        self.positions.insert(at, pos);
    }
}

fn matvec(w: &[f32], x: &[f32], out_dim: usize, in_dim: usize) -> Vec<f32> {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim);
    (0..out_dim)
        .map(|o| dot(&w[o * in_dim..(o + 1) * in_dim], x))
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn layer_norm(x: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = (var + LN_EPS).sqrt().recip();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn softmax_inplace(scores: &mut [f32]) {
    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}
