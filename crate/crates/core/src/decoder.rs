//! Decoder-side query machinery: heatmap-induced initial queries, low-quality
//! query suppression, deformable attention over the encoder value grid, and a
//! configurable layer stack with exact multiply-accumulate accounting.
//!
//! MAC accounting counts per-channel multiply-accumulates only: linear
//! projections, the four corner gathers of each bilinear sample, value mixes,
//! and (in soft mode) key dots. Scalar per-point work such as softmax, tanh,
//! and score scaling is excluded, which keeps the closed form exact.

use crate::encoder::EmbeddingSeq;
use crate::error::{Error, Result};
use crate::numerics::softmax_rows;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Query vectors with their per-query heat scores and originating grid cells.
#[derive(Clone, Debug)]
pub struct QuerySet<T> {
    pub queries: Tensor<T>,
    pub scores: Vec<T>,
    pub cells: Vec<usize>,
}

impl<T: Scalar> QuerySet<T> {
    pub fn count(&self) -> usize {
        self.queries.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.queries.shape()[1]
    }
}

/// queries = E_mixed * w_q^T, one query per token; scores are the token heat
/// values min-max normalized to [0, 1].
pub fn init_queries<T: Scalar>(e_mixed: &EmbeddingSeq<T>, w_q: &Tensor<T>) -> Result<QuerySet<T>> {
    let (d_out, d_in) = w_q.dims2("init_queries")?;
    if d_in != e_mixed.width() {
        return Err(Error::shape("init_queries", [d_out, e_mixed.width()], w_q.shape()));
    }
    let queries = crate::numerics::linear_map(w_q, None, &e_mixed.tokens)?;
    let min = e_mixed.heat.iter().copied().fold(T::infinity(), T::min).as_f64();
    let max = e_mixed.heat.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
    let span = max - min;
    let scores = e_mixed
        .heat
        .iter()
        .map(|v| {
            if span > 0.0 {
                T::of_f64((v.as_f64() - min) / span)
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(QuerySet {
        queries,
        scores,
        cells: (0..e_mixed.token_count()).collect(),
    })
}

/// Keeps queries with score strictly above tau, then the top_m by score.
/// Ties break toward the lower flat cell index; the result is ordered by
/// descending score. An empty survivor set is reported as
/// [`Error::NoHotQueries`] so callers can lower tau instead of decoding
/// nothing.
pub fn suppress_queries<T: Scalar>(qs: &QuerySet<T>, tau: T, top_m: usize) -> Result<QuerySet<T>> {
    if top_m == 0 {
        return Err(Error::invalid("suppress_queries: top_m must be >= 1"));
    }
    let d = qs.width();
    let mut keep: Vec<usize> = (0..qs.count()).filter(|&m| qs.scores[m] > tau).collect();
    if keep.is_empty() {
        return Err(Error::NoHotQueries { tau: tau.as_f64() });
    }
    keep.sort_by(|&a, &b| {
        qs.scores[b]
            .as_f64()
            .total_cmp(&qs.scores[a].as_f64())
            .then(qs.cells[a].cmp(&qs.cells[b]))
    });
    keep.truncate(top_m);
    let mut data = Vec::with_capacity(keep.len() * d);
    for &m in &keep {
        data.extend_from_slice(&qs.queries.data()[m * d..(m + 1) * d]);
    }
    Ok(QuerySet {
        queries: Tensor::assemble([keep.len(), d], data),
        scores: keep.iter().map(|&m| qs.scores[m]).collect(),
        cells: keep.iter().map(|&m| qs.cells[m]).collect(),
    })
}

/// Normalized [0,1]^2 reference point of each query's own grid cell, in
/// (x, y) order. Scaling back by (W-1, H-1) lands exactly on the cell.
pub fn grid_ref_points<T: Scalar>(cells: &[usize], grid: (usize, usize)) -> Tensor<T> {
    let (h, w) = grid;
    let sx = (w.max(2) - 1) as f64;
    let sy = (h.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(cells.len() * 2);
    for &cell in cells {
        let (row, col) = (cell / w, cell % w);
        data.push(T::of_f64(col as f64 / sx));
        data.push(T::of_f64(row as f64 / sy));
    }
    Tensor::assemble([cells.len(), 2], data)
}

/// Sampling geometry and mixing weights for one deformable attention call:
/// P points per query, normalized reference points (M, 2), normalized offsets
/// (M, P, 2), and a row-stochastic weight matrix (M, P).
#[derive(Clone, Debug)]
pub struct DeformAttnParams<T> {
    pub points: usize,
    pub ref_points: Tensor<T>,
    pub offsets: Tensor<T>,
    pub attn_weights: Tensor<T>,
}

impl<T: Scalar> DeformAttnParams<T> {
    pub fn new(
        ref_points: Tensor<T>,
        offsets: Tensor<T>,
        attn_weights: Tensor<T>,
    ) -> Result<Self> {
        let (m, two) = ref_points.dims2("deform_attn_params")?;
        if two != 2 {
            return Err(Error::shape("deform_attn_params ref", "(M, 2)", ref_points.shape()));
        }
        if ref_points.data().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::invalid("reference points must lie in [0, 1]^2"));
        }
        let (mo, p, two_o) = offsets.dims3("deform_attn_params")?;
        if mo != m || two_o != 2 {
            return Err(Error::shape("deform_attn_params offsets", [m, p, 2], offsets.shape()));
        }
        if attn_weights.shape() != [m, p] {
            return Err(Error::shape("deform_attn_params weights", [m, p], attn_weights.shape()));
        }
        for r in 0..m {
            let row = &attn_weights.data()[r * p..(r + 1) * p];
            if row.iter().any(|&v| v < T::zero()) {
                return Err(Error::invalid(format!("attention weight row {r} has a negative entry")));
            }
            let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("attention weight row {r} sums to {sum}")));
            }
        }
        Ok(Self {
            points: p,
            ref_points,
            offsets,
            attn_weights,
        })
    }
}

/// out(m) = sum_p w(m,p) * bilinear(v at (ref(m) + offset(m,p)) in pixels).
///
/// `v_enc` is (N, D) with N = grid.0 * grid.1 flattened row-major; every
/// depth channel is sampled at the same spatial point. Points beyond the grid
/// clamp at the borders.
pub fn deform_attention<T: Scalar>(
    qs: &QuerySet<T>,
    v_enc: &Tensor<T>,
    grid: (usize, usize),
    params: &DeformAttnParams<T>,
) -> Result<Tensor<T>> {
    if params.ref_points.shape()[0] != qs.count() {
        return Err(Error::shape(
            "deform_attention",
            format!("params for {} queries", qs.count()),
            params.ref_points.shape(),
        ));
    }
    deform_attention_impl(v_enc, grid, params, &mut 0)
}

pub(crate) fn deform_attention_impl<T: Scalar>(
    v_enc: &Tensor<T>,
    grid: (usize, usize),
    params: &DeformAttnParams<T>,
    macs: &mut u64,
) -> Result<Tensor<T>> {
    let (gh, gw) = grid;
    let (n, d) = v_enc.dims2("deform_attention")?;
    if gh * gw != n {
        return Err(Error::shape("deform_attention", format!("{gh}x{gw} grid"), &[n]));
    }
    let m = params.ref_points.shape()[0];
    let p = params.points;
    for r in 0..m {
        let row = &params.attn_weights.data()[r * p..(r + 1) * p];
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!(
                "deform_attention: weight row {r} sums to {sum}"
            )));
        }
    }
    let sx = (gw - 1) as f64;
    let sy = (gh - 1) as f64;
    let v = v_enc.data();
    let mut out = vec![0.0f64; m * d];
    for q in 0..m {
        let rx = params.ref_points.get2(q, 0).as_f64();
        let ry = params.ref_points.get2(q, 1).as_f64();
        for pt in 0..p {
            let off = (q * p + pt) * 2;
            let x = (rx + params.offsets.data()[off].as_f64()) * sx;
            let y = (ry + params.offsets.data()[off + 1].as_f64()) * sy;
            let aw = params.attn_weights.get2(q, pt).as_f64();
            // shared corner geometry for all D channels
            let xc = x.clamp(0.0, sx.max(0.0));
            let yc = y.clamp(0.0, sy.max(0.0));
            let x0 = xc.floor() as usize;
            let y0 = yc.floor() as usize;
            let x1 = (x0 + 1).min(gw - 1);
            let y1 = (y0 + 1).min(gh - 1);
            let fx = xc - x0 as f64;
            let fy = yc - y0 as f64;
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            let r00 = (y0 * gw + x0) * d;
            let r01 = (y0 * gw + x1) * d;
            let r10 = (y1 * gw + x0) * d;
            let r11 = (y1 * gw + x1) * d;
            for c in 0..d {
                let sample = w00 * v[r00 + c].as_f64()
                    + w01 * v[r01 + c].as_f64()
                    + w10 * v[r10 + c].as_f64()
                    + w11 * v[r11 + c].as_f64();
                out[q * d + c] += aw * sample;
            }
            *macs += 5 * d as u64; // 4 corner gathers + 1 weighted mix per channel
        }
    }
    Ok(Tensor::assemble(
        [m, d],
        out.into_iter().map(T::of_f64).collect(),
    ))
}

/// Decoder shape knobs; layer count is the ablation axis.
#[derive(Clone, Copy, Debug)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub points: usize,
    pub depth: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.layers) {
            return Err(Error::invalid(format!("layers = {} outside [1, 8]", self.layers)));
        }
        if self.heads == 0 || self.depth % self.heads != 0 {
            return Err(Error::invalid(format!(
                "depth {} not divisible by {} heads",
                self.depth, self.heads
            )));
        }
        if self.points == 0 {
            return Err(Error::invalid("points must be >= 1"));
        }
        Ok(())
    }
}

/// How low-quality queries are handled: `Hard` expects the caller to have
/// thresholded and truncated the query set already; `Soft` keeps every query
/// and multiplies its attention logits (augmented with sampled-key dots) by
/// the query's heat score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SuppressMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Clone, Debug)]
struct LayerWeights<T> {
    w_offsets: Tensor<T>, // (heads * P * 2, D)
    w_attn: Tensor<T>,    // (heads * P, D)
    w_ffn: Tensor<T>,     // (D, D)
}

/// A stack of L identical-shape layers: per-head deformable attention with
/// query-predicted offsets and weights, a residual, and a position-wise
/// linear sublayer with a second residual. No normalization layers, so the
/// MAC count stays exactly analyzable.
#[derive(Clone, Debug)]
pub struct DecoderStack<T> {
    cfg: DecoderConfig,
    layers: Vec<LayerWeights<T>>,
}

/// Per-layer outputs (every intermediate layer is emitted) plus the cost
/// report from the instrumented counter.
#[derive(Clone, Debug)]
pub struct DecoderRun<T> {
    pub layer_outputs: Vec<Tensor<T>>,
    pub cost: CostReport,
}

#[derive(Clone, Debug, Default)]
pub struct CostReport {
    pub layer_macs: Vec<u64>,
    pub cumulative: Vec<u64>,
}

/// Closed-form per-layer MAC count; see the README derivation. Independent of
/// the encoder token count N by construction of deformable sampling.
pub fn analytic_layer_macs(m: usize, depth: usize, points: usize, heads: usize, mode: SuppressMode) -> u64 {
    let (m, d, p, h) = (m as u64, depth as u64, points as u64, heads as u64);
    let hard = m * (3 * h * p * d + 5 * p * d + d * d);
    match mode {
        SuppressMode::Hard => hard,
        SuppressMode::Soft => hard + m * 5 * p * d,
    }
}

impl<T: Scalar> DecoderStack<T> {
    pub fn seeded(cfg: DecoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.depth;
        let bound = 1.0 / (d as f64).sqrt();
        let ffn_bound = 1.0 / d as f64;
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights {
                w_offsets: rng.uniform_tensor([cfg.heads * cfg.points * 2, d], -bound, bound),
                w_attn: rng.uniform_tensor([cfg.heads * cfg.points, d], -bound, bound),
                w_ffn: rng.uniform_tensor([d, d], -ffn_bound, ffn_bound),
            })
            .collect();
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> DecoderConfig {
        self.cfg
    }

    pub fn run(
        &self,
        qs: &QuerySet<T>,
        k_enc: &Tensor<T>,
        v_enc: &Tensor<T>,
        grid: (usize, usize),
        mode: SuppressMode,
    ) -> Result<DecoderRun<T>> {
        let (n, d) = v_enc.dims2("decoder_stack")?;
        if k_enc.shape() != [n, d] {
            return Err(Error::shape("decoder_stack k_enc", [n, d], k_enc.shape()));
        }
        if grid.0 * grid.1 != n {
            return Err(Error::shape("decoder_stack grid", format!("{n} cells"), &[grid.0 * grid.1]));
        }
        if qs.width() != d || d != self.cfg.depth {
            return Err(Error::shape("decoder_stack queries", [qs.count(), self.cfg.depth], qs.queries.shape()));
        }
        let m = qs.count();
        let (heads, p) = (self.cfg.heads, self.cfg.points);
        let dh = d / heads;
        let ref_points: Tensor<T> = grid_ref_points(&qs.cells, grid);

        let mut cur = qs.queries.clone();
        let mut outputs = Vec::with_capacity(self.cfg.layers);
        let mut cost = CostReport::default();
        let mut total = 0u64;

        for lw in &self.layers {
            let mut macs = 0u64;
            let offsets_raw = counted_linear(&lw.w_offsets, &cur, &mut macs);
            let attn_raw = counted_linear(&lw.w_attn, &cur, &mut macs);

            let mut attn_out = vec![T::zero(); m * d];
            for h in 0..heads {
                // per-head normalized offsets, tanh-bounded to one grid span
                let mut off = Vec::with_capacity(m * p * 2);
                for q in 0..m {
                    for pt in 0..p {
                        let base = q * heads * p * 2 + (h * p + pt) * 2;
                        off.push(T::of_f64(offsets_raw[base].tanh()));
                        off.push(T::of_f64(offsets_raw[base + 1].tanh()));
                    }
                }
                let offsets = Tensor::assemble([m, p, 2], off);

                let mut logits = Vec::with_capacity(m * p);
                for q in 0..m {
                    for pt in 0..p {
                        let mut l = attn_raw[q * heads * p + h * p + pt];
                        if mode == SuppressMode::Soft {
                            l += self.sampled_key_dot(
                                k_enc, grid, &cur, &ref_points, &offsets, q, pt, h, dh, &mut macs,
                            );
                            l *= qs.scores[q].as_f64();
                        }
                        logits.push(T::of_f64(l));
                    }
                }
                let weights = softmax_rows(&Tensor::assemble([m, p], logits))?;
                let params = DeformAttnParams {
                    points: p,
                    ref_points: ref_points.clone(),
                    offsets,
                    attn_weights: weights,
                };
                let v_h = slice_columns(v_enc, h * dh, dh);
                let out_h = deform_attention_impl(&v_h, grid, &params, &mut macs)?;
                for q in 0..m {
                    for c in 0..dh {
                        attn_out[q * d + h * dh + c] = out_h.get2(q, c);
                    }
                }
            }

            // residual + position-wise linear + residual
            let mut h1 = Vec::with_capacity(m * d);
            for (a, b) in cur.data().iter().zip(&attn_out) {
                h1.push(T::of_f64(a.as_f64() + b.as_f64()));
            }
            let h1 = Tensor::assemble([m, d], h1);
            let ffn = counted_linear(&lw.w_ffn, &h1, &mut macs);
            let mut next = Vec::with_capacity(m * d);
            for (a, b) in h1.data().iter().zip(&ffn) {
                next.push(T::of_f64(a.as_f64() + b));
            }
            cur = Tensor::assemble([m, d], next);
            outputs.push(cur.clone());
            total += macs;
            cost.layer_macs.push(macs);
            cost.cumulative.push(total);
        }

        Ok(DecoderRun {
            layer_outputs: outputs,
            cost,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn sampled_key_dot(
        &self,
        k_enc: &Tensor<T>,
        grid: (usize, usize),
        cur: &Tensor<T>,
        ref_points: &Tensor<T>,
        offsets: &Tensor<T>,
        q: usize,
        pt: usize,
        head: usize,
        dh: usize,
        macs: &mut u64,
    ) -> f64 {
        let (gh, gw) = grid;
        let d = cur.shape()[1];
        let sx = (gw - 1) as f64;
        let sy = (gh - 1) as f64;
        let x = ((ref_points.get2(q, 0).as_f64() + offsets.get3(q, pt, 0).as_f64()) * sx)
            .clamp(0.0, sx.max(0.0));
        let y = ((ref_points.get2(q, 1).as_f64() + offsets.get3(q, pt, 1).as_f64()) * sy)
            .clamp(0.0, sy.max(0.0));
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(gw - 1);
        let y1 = (y0 + 1).min(gh - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let corners = [
            ((y0 * gw + x0) * d, (1.0 - fy) * (1.0 - fx)),
            ((y0 * gw + x1) * d, (1.0 - fy) * fx),
            ((y1 * gw + x0) * d, fy * (1.0 - fx)),
            ((y1 * gw + x1) * d, fy * fx),
        ];
        let col0 = head * dh;
        let mut dot = 0.0f64;
        for c in 0..dh {
            let mut sample = 0.0f64;
            for (row, w) in corners {
                sample += w * k_enc.data()[row + col0 + c].as_f64();
            }
            dot += cur.get2(q, col0 + c).as_f64() * sample;
        }
        *macs += 5 * dh as u64; // 4 gathers + 1 dot per channel
        dot / (dh as f64).sqrt()
    }
}

/// Plain (rows, out) = x * W^T in f64, counting one MAC per multiply.
fn counted_linear<T: Scalar>(w: &Tensor<T>, x: &Tensor<T>, macs: &mut u64) -> Vec<f64> {
    let (out_dim, inner) = (w.shape()[0], w.shape()[1]);
    let rows = x.shape()[0];
    debug_assert_eq!(x.shape()[1], inner);
    let mut out = vec![0.0f64; rows * out_dim];
    for r in 0..rows {
        let xr = &x.data()[r * inner..(r + 1) * inner];
        for o in 0..out_dim {
            let wr = &w.data()[o * inner..(o + 1) * inner];
            let mut acc = 0.0f64;
            for (a, b) in xr.iter().zip(wr) {
                acc += a.as_f64() * b.as_f64();
            }
            out[r * out_dim + o] = acc;
        }
    }
    *macs += (rows * out_dim * inner) as u64;
    out
}

fn slice_columns<T: Scalar>(t: &Tensor<T>, col0: usize, width: usize) -> Tensor<T> {
    let (rows, d) = (t.shape()[0], t.shape()[1]);
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        data.extend_from_slice(&t.data()[r * d + col0..r * d + col0 + width]);
    }
    Tensor::assemble([rows, width], data)
}
