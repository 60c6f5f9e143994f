//! Encoder-side fusion: heatmap token embedding, concatenated Q/K/V
//! projection, multi-head self-attention, and multi-scale map fusion.
//!
//! Class and box heatmaps are embedded per cell (a learnable D-vector scaled
//! by the cell's heat value, plus the mask-gated positional encoding), the two
//! token sequences are concatenated along depth, and three bias-free linear
//! maps produce Q/K/V for standard scaled dot-product attention.

use crate::error::{Error, Result};
use crate::mask_pe::PosEncoding;
use crate::numerics::{linear_map, resize_bilinear, softmax_rows};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which heatmap a token sequence was embedded from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatSource {
    Class,
    Bbox,
    Mixed,
}

/// Flattened (N, D) token sequence with its originating heat values.
///
/// The per-cell heat is carried alongside the tokens because the decoder's
/// query scoring needs it after the spatial grid has been flattened away.
#[derive(Clone, Debug)]
pub struct EmbeddingSeq<T> {
    pub tokens: Tensor<T>,
    pub source: HeatSource,
    pub heat: Vec<T>,
}

impl<T: Scalar> EmbeddingSeq<T> {
    pub fn token_count(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Bias-free Q/K/V projections over the concatenated width 2D.
#[derive(Clone, Debug)]
pub struct QkvProjections<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
}

impl<T: Scalar> QkvProjections<T> {
    pub fn new(w_q: Tensor<T>, w_k: Tensor<T>, w_v: Tensor<T>) -> Result<Self> {
        let (d_out, two_d) = w_q.dims2("qkv_projections")?;
        for (name, w) in [("w_k", &w_k), ("w_v", &w_v)] {
            if w.shape() != [d_out, two_d] {
                return Err(Error::shape(
                    "qkv_projections",
                    format!("{name} of ({d_out}, {two_d})"),
                    w.shape(),
                ));
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn seeded(d_out: usize, concat_width: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (concat_width as f64).sqrt();
        Self {
            w_q: rng.uniform_tensor([d_out, concat_width], -bound, bound),
            w_k: rng.uniform_tensor([d_out, concat_width], -bound, bound),
            w_v: rng.uniform_tensor([d_out, concat_width], -bound, bound),
        }
    }
}

/// token(p) = proj * h(p) + pe(p), flattened row-major to (N, D).
///
/// `proj` is a (D, 1) column: the per-cell heat scalar is the entire input of
/// the linear projection, which is the minimal reading of an "independent
/// linear projection" of a single heatmap.
pub fn embed_heatmap<T: Scalar>(
    h: &Tensor<T>,
    proj: &Tensor<T>,
    pe: &PosEncoding<T>,
    source: HeatSource,
) -> Result<EmbeddingSeq<T>> {
    let (rows, cols) = h.dims2("embed_heatmap")?;
    let (pd, one) = proj.dims2("embed_heatmap")?;
    if one != 1 {
        return Err(Error::shape("embed_heatmap proj", "(D, 1)", proj.shape()));
    }
    if pe.dims() != (rows, cols) {
        return Err(Error::shape("embed_heatmap pe", [rows, cols], pe.table().shape()));
    }
    if pe.depth() != pd {
        return Err(Error::shape("embed_heatmap pe depth", [pd], &[pe.depth()]));
    }
    let n = rows * cols;
    let mut tokens = Vec::with_capacity(n * pd);
    let mut heat = Vec::with_capacity(n);
    for i in 0..rows {
        for j in 0..cols {
            let hv = h.get2(i, j);
            heat.push(hv);
            let cell_pe = pe.at(i, j);
            for d in 0..pd {
                let v = proj.data()[d].as_f64() * hv.as_f64() + cell_pe[d].as_f64();
                tokens.push(T::of_f64(v));
            }
        }
    }
    Ok(EmbeddingSeq {
        tokens: Tensor::assemble([n, pd], tokens),
        source,
        heat,
    })
}

/// Concatenates the class and box token sequences along depth and projects
/// the (N, 2D) result through the three maps: (Q, K, V), each (N, D_out).
pub fn fuse_qkv<T: Scalar>(
    e_class: &EmbeddingSeq<T>,
    e_bbox: &EmbeddingSeq<T>,
    proj: &QkvProjections<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let n = e_class.token_count();
    if e_bbox.token_count() != n {
        return Err(Error::shape(
            "fuse_qkv",
            format!("{n} tokens"),
            &[e_bbox.token_count()],
        ));
    }
    if e_class.width() != e_bbox.width() {
        return Err(Error::shape("fuse_qkv", [n, e_class.width()], e_bbox.tokens.shape()));
    }
    let d = e_class.width();
    let (_, two_d) = proj.w_q.dims2("fuse_qkv")?;
    if two_d != 2 * d {
        return Err(Error::shape("fuse_qkv proj", [2 * d], &[two_d]));
    }
    let mut cat = Vec::with_capacity(n * 2 * d);
    for r in 0..n {
        cat.extend_from_slice(&e_class.tokens.data()[r * d..(r + 1) * d]);
        cat.extend_from_slice(&e_bbox.tokens.data()[r * d..(r + 1) * d]);
    }
    let cat = Tensor::assemble([n, 2 * d], cat);
    Ok((
        linear_map(&proj.w_q, None, &cat)?,
        linear_map(&proj.w_k, None, &cat)?,
        linear_map(&proj.w_v, None, &cat)?,
    ))
}

/// Per-head scaled dot-product attention with heads concatenated back to
/// (N, D). Scale is 1/sqrt(D/heads).
pub fn multihead_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    Ok(multihead_attention_with_weights(q, k, v, heads)?.0)
}

/// As [`multihead_attention`], also returning the (heads, N, N) row-stochastic
/// attention weights for inspection.
pub fn multihead_attention_with_weights<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, d) = q.dims2("multihead_attention")?;
    for (name, m) in [("k", k), ("v", v)] {
        if m.shape() != [n, d] {
            return Err(Error::shape(
                "multihead_attention",
                format!("{name} of ({n}, {d})"),
                m.shape(),
            ));
        }
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut weights = Vec::with_capacity(heads * n * n);
    for h in 0..heads {
        let col0 = h * dh;
        // logits, row-softmaxed per query
        let mut logits = Vec::with_capacity(n * n);
        for i in 0..n {
            let qi = &q.data()[i * d + col0..i * d + col0 + dh];
            for j in 0..n {
                let kj = &k.data()[j * d + col0..j * d + col0 + dh];
                let mut acc = 0.0f64;
                for (a, b) in qi.iter().zip(kj) {
                    acc += a.as_f64() * b.as_f64();
                }
                logits.push(T::of_f64(acc * scale));
            }
        }
        let attn = softmax_rows(&Tensor::assemble([n, n], logits))?;
        for i in 0..n {
            for c in 0..dh {
                let mut acc = 0.0f64;
                for j in 0..n {
                    acc += attn.get2(i, j).as_f64() * v.data()[j * d + col0 + c].as_f64();
                }
                out[i * d + col0 + c] = T::of_f64(acc);
            }
        }
        weights.extend_from_slice(attn.data());
    }
    Ok((
        Tensor::assemble([n, d], out),
        Tensor::assemble([heads, n, n], weights),
    ))
}

/// Upsamples every map to the target dims and averages them element-wise.
/// Each input's dims must divide the target dims.
pub fn multiscale_fuse<T: Scalar>(maps: &[Tensor<T>], target: (usize, usize)) -> Result<Tensor<T>> {
    let (th, tw) = target;
    if maps.is_empty() {
        return Err(Error::invalid("multiscale_fuse: no input maps"));
    }
    let mut acc = vec![0.0f64; th * tw];
    for m in maps {
        let (h, w) = m.dims2("multiscale_fuse")?;
        if th % h != 0 || tw % w != 0 {
            return Err(Error::shape(
                "multiscale_fuse",
                format!("dims dividing ({th}, {tw})"),
                m.shape(),
            ));
        }
        let up = if (h, w) == (th, tw) {
            m.clone()
        } else {
            resize_bilinear(m, th, tw)?
        };
        for (a, v) in acc.iter_mut().zip(up.data()) {
            *a += v.as_f64();
        }
    }
    let inv = 1.0 / maps.len() as f64;
    Ok(Tensor::assemble(
        [th, tw],
        acc.into_iter().map(|v| T::of_f64(v * inv)).collect(),
    ))
}

/// Average-pools a map by an integer factor; used to build the coarse levels
/// of the multi-scale pyramid. Dims must be divisible by the factor.
pub fn avg_pool<T: Scalar>(map: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w) = map.dims2("avg_pool")?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "avg_pool: factor {factor} must divide dims ({h}, {w})"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0f64;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += map.get2(r * factor + dr, c * factor + dc).as_f64();
                }
            }
            out.push(T::of_f64(acc * inv));
        }
    }
    Ok(Tensor::assemble([oh, ow], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask_pe::{mask_from_heatmap, masked_pe, sinusoidal_pe, MaskFilter};

    fn pe_for(h: usize, w: usize, d: usize) -> PosEncoding<f64> {
        sinusoidal_pe(h, w, d).unwrap()
    }

    #[test]
    fn embed_zero_proj_passes_pe_through() {
        let h = Tensor::<f64>::full([2, 2], 0.8);
        let pe = pe_for(2, 2, 4);
        let proj = Tensor::<f64>::zeros([4, 1]);

        let all_ones = MaskFilter::from_binary(Tensor::full([2, 2], 1.0), 0.0).unwrap();
        let kept = masked_pe(&pe, &all_ones).unwrap();
        let e = embed_heatmap(&h, &proj, &kept, HeatSource::Class).unwrap();
        assert_eq!(e.tokens.shape(), &[4, 4]);
        for i in 0..2 {
            for j in 0..2 {
                for d in 0..4 {
                    assert_eq!(e.tokens.get2(i * 2 + j, d), pe.at(i, j)[d]);
                }
            }
        }

        let all_zero = MaskFilter::from_binary(Tensor::zeros([2, 2]), 0.0).unwrap();
        let gone = masked_pe(&pe, &all_zero).unwrap();
        let e = embed_heatmap(&h, &proj, &gone, HeatSource::Bbox).unwrap();
        assert!(e.tokens.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_matches_per_cell_oracle() {
        let mut rng = Rng::new(14);
        let h: Tensor<f64> = rng.uniform_tensor([3, 2], 0.0, 1.0);
        let proj: Tensor<f64> = rng.uniform_tensor([4, 1], -1.0, 1.0);
        let pe = pe_for(3, 2, 4);
        let e = embed_heatmap(&h, &proj, &pe, HeatSource::Mixed).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                for d in 0..4 {
                    let expect = proj.data()[d] * h.get2(i, j) + pe.at(i, j)[d];
                    assert!((e.tokens.get2(i * 2 + j, d) - expect).abs() < 1e-12);
                }
            }
        }
        assert_eq!(e.heat.len(), 6);
        assert_eq!(e.heat[5], h.get2(2, 1));

        let wrong_pe = pe_for(2, 2, 4);
        assert!(embed_heatmap(&h, &proj, &wrong_pe, HeatSource::Mixed).is_err());
    }

    #[test]
    fn fuse_qkv_zero_and_block_identity() {
        let pe = pe_for(2, 2, 4);
        let zero_mask = MaskFilter::from_binary(Tensor::zeros([2, 2]), 0.0).unwrap();
        let gone = masked_pe(&pe, &zero_mask).unwrap();
        let zeros = Tensor::<f64>::zeros([2, 2]);
        let proj0 = Tensor::<f64>::zeros([4, 1]);
        let ec = embed_heatmap(&zeros, &proj0, &gone, HeatSource::Class).unwrap();
        let eb = embed_heatmap(&zeros, &proj0, &gone, HeatSource::Bbox).unwrap();
        let mut rng = Rng::new(3);
        let proj = QkvProjections::<f64>::seeded(4, 8, &mut rng);
        let (q, k, v) = fuse_qkv(&ec, &eb, &proj).unwrap();
        assert!(q.data().iter().chain(k.data()).chain(v.data()).all(|&x| x == 0.0));

        // w_q = [I | 0] selects the class half exactly
        let mut rng = Rng::new(4);
        let hc: Tensor<f64> = rng.uniform_tensor([2, 2], 0.0, 1.0);
        let hb: Tensor<f64> = rng.uniform_tensor([2, 2], 0.0, 1.0);
        let pvec: Tensor<f64> = rng.uniform_tensor([4, 1], -1.0, 1.0);
        let ec = embed_heatmap(&hc, &pvec, &pe, HeatSource::Class).unwrap();
        let eb = embed_heatmap(&hb, &pvec, &pe, HeatSource::Bbox).unwrap();
        let mut block = vec![0.0f64; 4 * 8];
        for i in 0..4 {
            block[i * 8 + i] = 1.0;
        }
        let ident_left = Tensor::new(vec![4, 8], block).unwrap();
        let proj = QkvProjections::new(
            ident_left.clone(),
            rng.uniform_tensor([4, 8], -1.0, 1.0),
            rng.uniform_tensor([4, 8], -1.0, 1.0),
        )
        .unwrap();
        let (q, k, _v) = fuse_qkv(&ec, &eb, &proj).unwrap();
        assert_eq!(q, ec.tokens);

        // independent concat + matmul oracle on K
        for r in 0..4 {
            for o in 0..4 {
                let mut acc = 0.0;
                for c in 0..4 {
                    acc += proj.w_k.get2(o, c) * ec.tokens.get2(r, c);
                    acc += proj.w_k.get2(o, 4 + c) * eb.tokens.get2(r, c);
                }
                assert!((k.get2(r, o) - acc).abs() < 1e-9);
            }
        }

        let short = EmbeddingSeq {
            tokens: Tensor::<f64>::zeros([3, 4]),
            source: HeatSource::Bbox,
            heat: vec![0.0; 3],
        };
        assert!(fuse_qkv(&ec, &short, &proj).is_err());
    }

    #[test]
    fn fuse_qkv_is_linear_in_its_inputs() {
        let mut rng = Rng::new(9);
        let pe = pe_for(2, 2, 4);
        let zero_pe = masked_pe(
            &pe,
            &MaskFilter::from_binary(Tensor::zeros([2, 2]), 0.0).unwrap(),
        )
        .unwrap();
        let proj_vec: Tensor<f64> = rng.uniform_tensor([4, 1], -1.0, 1.0);
        let hc: Tensor<f64> = rng.uniform_tensor([2, 2], 0.0, 1.0);
        let hb: Tensor<f64> = rng.uniform_tensor([2, 2], 0.0, 1.0);
        // zero PE keeps the embedding linear in the heat values
        let e1 = embed_heatmap(&hc, &proj_vec, &zero_pe, HeatSource::Class).unwrap();
        let e2 = embed_heatmap(&hb, &proj_vec, &zero_pe, HeatSource::Bbox).unwrap();
        let scaled1 = embed_heatmap(&hc.map(|v| 3.0 * v), &proj_vec, &zero_pe, HeatSource::Class).unwrap();
        let scaled2 = embed_heatmap(&hb.map(|v| 3.0 * v), &proj_vec, &zero_pe, HeatSource::Bbox).unwrap();
        let proj = QkvProjections::<f64>::seeded(4, 8, &mut rng);
        let (q, k, v) = fuse_qkv(&e1, &e2, &proj).unwrap();
        let (qs, ks, vs) = fuse_qkv(&scaled1, &scaled2, &proj).unwrap();
        for (a, b) in [(q, qs), (k, ks), (v, vs)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((3.0 * x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn attention_identical_values_collapse() {
        let mut rng = Rng::new(10);
        let q: Tensor<f64> = rng.uniform_tensor([3, 4], -1.0, 1.0);
        let k: Tensor<f64> = rng.uniform_tensor([3, 4], -1.0, 1.0);
        let row: Vec<f64> = (0..4).map(|i| i as f64 * 0.3 - 0.4).collect();
        let v = Tensor::new(vec![3, 4], row.iter().cycle().take(12).copied().collect()).unwrap();
        let out = multihead_attention(&q, &k, &v, 2).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((out.get2(r, c) - row[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_single_token_returns_value() {
        let q = Tensor::<f64>::full([1, 4], 0.7);
        let k = Tensor::<f64>::full([1, 4], -0.3);
        let v = Tensor::<f64>::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = multihead_attention(&q, &k, &v, 4).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn attention_single_head_matches_hand_computation() {
        let q = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let k = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let scale = 1.0 / 2f64.sqrt();
        // logits row 0: [ (1*1+0*0)*s, (1*0+0*1)*s ] = [s, 0]
        let e = scale.exp();
        let w00 = e / (e + 1.0);
        let w01 = 1.0 / (e + 1.0);
        let expect00 = w00 * 1.0 + w01 * 3.0;
        let expect01 = w00 * 2.0 + w01 * 4.0;
        let out = multihead_attention(&q, &k, &v, 1).unwrap();
        assert!((out.get2(0, 0) - expect00).abs() < 1e-12);
        assert!((out.get2(0, 1) - expect01).abs() < 1e-12);
    }

    #[test]
    fn attention_weights_are_row_stochastic() {
        let mut rng = Rng::new(15);
        let q: Tensor<f64> = rng.uniform_tensor([6, 8], -2.0, 2.0);
        let k: Tensor<f64> = rng.uniform_tensor([6, 8], -2.0, 2.0);
        let v: Tensor<f64> = rng.uniform_tensor([6, 8], -2.0, 2.0);
        let (_, w) = multihead_attention_with_weights(&q, &k, &v, 4).unwrap();
        let (heads, n, _) = w.dims3("test").unwrap();
        for h in 0..heads {
            for i in 0..n {
                let sum: f64 = (0..n).map(|j| w.get3(h, i, j)).sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!((0..n).all(|j| w.get3(h, i, j) >= 0.0));
            }
        }
        assert!(multihead_attention(&q, &k, &v, 3).is_err());
    }

    #[test]
    fn attention_is_jointly_permutation_equivariant() {
        let mut rng = Rng::new(16);
        let n = 5;
        let q: Tensor<f64> = rng.uniform_tensor([n, 4], -1.0, 1.0);
        let k: Tensor<f64> = rng.uniform_tensor([n, 4], -1.0, 1.0);
        let v: Tensor<f64> = rng.uniform_tensor([n, 4], -1.0, 1.0);
        let base = multihead_attention(&q, &k, &v, 2).unwrap();
        for _ in 0..20 {
            // Fisher-Yates over row indices
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                perm.swap(i, j);
            }
            let permute = |t: &Tensor<f64>| {
                let mut data = Vec::with_capacity(n * 4);
                for &src in &perm {
                    data.extend_from_slice(&t.data()[src * 4..(src + 1) * 4]);
                }
                Tensor::new(vec![n, 4], data).unwrap()
            };
            let out = multihead_attention(&permute(&q), &permute(&k), &permute(&v), 2).unwrap();
            let expected = permute(&base);
            for (a, b) in out.data().iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_query_row_attends_uniformly() {
        let mut rng = Rng::new(18);
        let mut qdata: Vec<f64> = rng.uniform_tensor::<f64>([4, 4], -1.0, 1.0).into_data();
        for d in 0..4 {
            qdata[2 * 4 + d] = 0.0; // token 2 is a cold cell with proj = 0
        }
        let q = Tensor::new(vec![4, 4], qdata).unwrap();
        let k: Tensor<f64> = rng.uniform_tensor([4, 4], -1.0, 1.0);
        let v: Tensor<f64> = rng.uniform_tensor([4, 4], -1.0, 1.0);
        let (_, w) = multihead_attention_with_weights(&q, &k, &v, 2).unwrap();
        for h in 0..2 {
            for j in 0..4 {
                assert!((w.get3(h, 2, j) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multiscale_constants_identity_and_average() {
        let c = Tensor::<f64>::full([4, 4], 0.3);
        let c2 = Tensor::<f64>::full([2, 2], 0.3);
        let c4 = Tensor::<f64>::full([1, 1], 0.3);
        let fused = multiscale_fuse(&[c.clone(), c2, c4], (4, 4)).unwrap();
        assert!(fused.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));

        let single = multiscale_fuse(&[c.clone()], (4, 4)).unwrap();
        assert_eq!(single, c);

        let zeros = Tensor::<f64>::zeros([4, 4]);
        let ones = Tensor::<f64>::full([4, 4], 1.0);
        let half = multiscale_fuse(&[zeros, ones], (4, 4)).unwrap();
        assert!(half.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));

        let odd = Tensor::<f64>::full([3, 3], 1.0);
        assert!(multiscale_fuse(&[odd], (4, 4)).is_err());
    }

    #[test]
    fn avg_pool_halves_dims() {
        let m = Tensor::<f64>::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let p = avg_pool(&m, 2).unwrap();
        assert_eq!(p.shape(), &[1, 1]);
        assert_eq!(p.data(), &[4.0]);
        assert!(avg_pool(&m, 3).is_err());
    }

    #[test]
    fn mask_pipeline_feeds_embedding() {
        // end-to-end: normalized heat -> mask -> gated pe -> tokens zero on cold cells
        let h = Tensor::<f64>::new(vec![2, 2], vec![1.0, 0.0, 0.2, 0.9]).unwrap();
        let mask = mask_from_heatmap(&h, 0.35).unwrap();
        let pe = pe_for(2, 2, 4);
        let gated = masked_pe(&pe, &mask).unwrap();
        let proj = Tensor::<f64>::zeros([4, 1]);
        let e = embed_heatmap(&h, &proj, &gated, HeatSource::Mixed).unwrap();
        for (cell, hot) in [(0, true), (1, false), (2, false), (3, true)] {
            let row = &e.tokens.data()[cell * 4..(cell + 1) * 4];
            if hot {
                assert!(row.iter().any(|&v| v != 0.0));
            } else {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }
}
