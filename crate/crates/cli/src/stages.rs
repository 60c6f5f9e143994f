//! Per-stage computations and their file-level command wrappers. Every stage
//! is a pure function of (config, inputs), so re-running any command with the
//! same seed reproduces its outputs byte for byte.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hmpe_core::decoder::{
    init_queries, suppress_queries, DecoderConfig, DecoderRun, DecoderStack, QuerySet,
    SuppressMode,
};
use hmpe_core::encoder::{
    avg_pool, embed_heatmap, fuse_qkv, multihead_attention_with_weights, multiscale_fuse,
    EmbeddingSeq, HeatSource, QkvProjections,
};
use hmpe_core::heads::{BboxHead, ClassHead};
use hmpe_core::heatmap::{heatmap_triplet, normalize_heatmap, HeatmapTriplet};
use hmpe_core::io::{read_hmpt, write_hmpt};
use hmpe_core::lsconv::{
    continuity_penalty, dual_path, fuse_paths, linear_conv, predict_offsets, snake_conv_full,
    Axis, OffsetPredictor, Orientation, StripKernel, PATH_LEN,
};
use hmpe_core::mask_pe::{mask_from_heatmap, masked_pe, sinusoidal_pe, MaskFilter, PosEncoding};
use hmpe_core::tensor::Tensor;
use hmpe_core::viz::{append_heatbar, overlay, read_ppm, render_body, write_ppm};
use hmpe_core::{Rng, Tensor32};

use crate::config::PipelineConfig;
use crate::synth::{read_bbox_head, read_class_head, seeded_heads};

// ---------------------------------------------------------------------------
// gen-heatmap

pub fn compute_triplet(
    cfg: &PipelineConfig,
    activations: &Tensor32,
    class_head: &ClassHead<f32>,
    bbox_head: &BboxHead<f32>,
) -> Result<HeatmapTriplet<f32>> {
    let target = cfg.box_target()?;
    Ok(heatmap_triplet(
        class_head,
        bbox_head,
        activations,
        &target,
        cfg.lambda,
        cfg.bbox_grad_order,
    )?)
}

pub fn gen_heatmap_cmd(
    cfg: &PipelineConfig,
    activations: &Path,
    class_head: Option<&Path>,
    bbox_head: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let a: Tensor32 = read_hmpt(activations)?;
    let (class, bbox) = match (class_head, bbox_head) {
        (Some(c), Some(b)) => (read_class_head(c)?, read_bbox_head(b)?),
        (None, None) => {
            let (k, h, w) = a.dims3("gen-heatmap")?;
            let mut sized = cfg.clone();
            (sized.channels, sized.height, sized.width) = (k, h, w);
            seeded_heads(&sized)
        }
        _ => bail!("pass both --class-head and --bbox-head, or neither for seeded heads"),
    };
    let triplet = compute_triplet(cfg, &a, &class, &bbox)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_hmpt(out_dir.join("h_class.hmpt"), &triplet.h_class)?;
    write_hmpt(out_dir.join("h_bbox.hmpt"), &triplet.h_bbox)?;
    write_hmpt(out_dir.join("h_mixed.hmpt"), &triplet.h_mixed)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// mask-pe

pub fn mask_pe_compute(
    heat_raw: &Tensor32,
    tau: f32,
    depth: usize,
) -> Result<(MaskFilter<f32>, PosEncoding<f32>)> {
    let norm = normalize_heatmap(heat_raw);
    let (h, w) = norm.dims2("mask-pe")?;
    let mask = mask_from_heatmap(&norm, tau)?;
    let pe = sinusoidal_pe(h, w, depth)?;
    let gated = masked_pe(&pe, &mask)?;
    Ok((mask, gated))
}

pub fn mask_pe_cmd(
    cfg: &PipelineConfig,
    heatmap: &Path,
    out_pe: &Path,
    out_mask: &Path,
) -> Result<()> {
    let heat: Tensor32 = read_hmpt(heatmap)?;
    let (mask, gated) = mask_pe_compute(&heat, cfg.tau, cfg.depth)?;
    write_hmpt(out_pe, gated.table())?;
    write_hmpt(out_mask, mask.mask())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// encode

pub struct EncodeOutputs {
    pub q_enc: Tensor32,
    pub k_enc: Tensor32,
    pub v_enc: Tensor32,
    pub enc_out: Tensor32,
    pub attn_weights: Tensor32,
    pub e_mixed_grid: (usize, usize),
}

/// Multi-scale pyramid of a normalized map: the map itself plus its 2x and 4x
/// average-pooled versions when the dims divide, fused back to full size and
/// re-normalized.
fn multiscale_normalized(h: &Tensor32) -> Result<Tensor32> {
    let (rows, cols) = h.dims2("multiscale")?;
    let mut maps = vec![h.clone()];
    for factor in [2usize, 4] {
        if rows % factor == 0 && cols % factor == 0 {
            maps.push(avg_pool(h, factor)?);
        }
    }
    Ok(normalize_heatmap(&multiscale_fuse(&maps, (rows, cols))?))
}

fn embed_from_heat(
    heat_norm: &Tensor32,
    tau: f32,
    depth: usize,
    source: HeatSource,
    rng: &mut Rng,
) -> Result<EmbeddingSeq<f32>> {
    let (h, w) = heat_norm.dims2("embed")?;
    let mask = mask_from_heatmap(heat_norm, tau)?;
    let pe = sinusoidal_pe(h, w, depth)?;
    let gated = masked_pe(&pe, &mask)?;
    let proj: Tensor32 = rng.uniform_tensor([depth, 1], -1.0, 1.0);
    Ok(embed_heatmap(heat_norm, &proj, &gated, source)?)
}

pub fn encode_compute(
    cfg: &PipelineConfig,
    h_class_raw: &Tensor32,
    h_bbox_raw: &Tensor32,
) -> Result<EncodeOutputs> {
    ensure!(
        h_class_raw.shape() == h_bbox_raw.shape(),
        "class and bbox heatmaps disagree on dims: {:?} vs {:?}",
        h_class_raw.shape(),
        h_bbox_raw.shape()
    );
    let (h, w) = h_class_raw.dims2("encode")?;
    let mut rng = Rng::for_stage(cfg.seed, "encode");
    let fused_class = multiscale_normalized(&normalize_heatmap(h_class_raw))?;
    let fused_bbox = multiscale_normalized(&normalize_heatmap(h_bbox_raw))?;
    let e_class = embed_from_heat(&fused_class, cfg.tau, cfg.depth, HeatSource::Class, &mut rng)?;
    let e_bbox = embed_from_heat(&fused_bbox, cfg.tau, cfg.depth, HeatSource::Bbox, &mut rng)?;
    let proj = QkvProjections::seeded(cfg.depth, 2 * cfg.depth, &mut rng);
    let (q_enc, k_enc, v_enc) = fuse_qkv(&e_class, &e_bbox, &proj)?;
    let (enc_out, attn_weights) =
        multihead_attention_with_weights(&q_enc, &k_enc, &v_enc, cfg.heads)?;
    Ok(EncodeOutputs {
        q_enc,
        k_enc,
        v_enc,
        enc_out,
        attn_weights,
        e_mixed_grid: (h, w),
    })
}

pub fn encode_cmd(
    cfg: &PipelineConfig,
    class_heat: &Path,
    bbox_heat: &Path,
    out_dir: &Path,
) -> Result<()> {
    let hc: Tensor32 = read_hmpt(class_heat)?;
    let hb: Tensor32 = read_hmpt(bbox_heat)?;
    let out = encode_compute(cfg, &hc, &hb)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_hmpt(out_dir.join("Q_enc.hmpt"), &out.q_enc)?;
    write_hmpt(out_dir.join("K_enc.hmpt"), &out.k_enc)?;
    write_hmpt(out_dir.join("V_enc.hmpt"), &out.v_enc)?;
    write_hmpt(out_dir.join("enc_out.hmpt"), &out.enc_out)?;
    write_hmpt(out_dir.join("attn_weights.hmpt"), &out.attn_weights)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// decode

pub struct DecodeOutputs {
    pub kept: QuerySet<f32>,
    pub run: DecoderRun<f32>,
    pub grid: (usize, usize),
}

/// The query-induction half of the decoder stage: normalize the mixed
/// heatmap, embed it under its own mask, and project tokens to initial
/// queries. Returns the query set together with the advanced stage stream so
/// the stack seeding that follows stays aligned.
pub fn induced_queries(
    cfg: &PipelineConfig,
    h_mixed_raw: &Tensor32,
) -> Result<(QuerySet<f32>, Rng)> {
    let norm = normalize_heatmap(h_mixed_raw);
    let d = cfg.depth;
    let mut rng = Rng::for_stage(cfg.seed, "decode");
    let e_mixed = embed_from_heat(&norm, cfg.tau, d, HeatSource::Mixed, &mut rng)?;
    let bound = 1.0 / (d as f64).sqrt();
    let w_q: Tensor32 = rng.uniform_tensor([d, d], -bound, bound);
    Ok((init_queries(&e_mixed, &w_q)?, rng))
}

pub fn decode_compute(
    cfg: &PipelineConfig,
    h_mixed_raw: &Tensor32,
    k_enc: &Tensor32,
    v_enc: &Tensor32,
) -> Result<DecodeOutputs> {
    let (h, w) = h_mixed_raw.dims2("decode")?;
    let (n, d) = v_enc.dims2("decode")?;
    ensure!(
        n == h * w,
        "V_enc has {n} tokens but the mixed heatmap grid is {h}x{w}"
    );
    ensure!(
        d == cfg.depth,
        "V_enc depth {d} does not match configured depth {} (pass --depth {d})",
        cfg.depth
    );
    let (qs, mut rng) = induced_queries(cfg, h_mixed_raw)?;
    let kept = match cfg.suppress {
        SuppressMode::Hard => suppress_queries(&qs, cfg.tau, cfg.top_m)?,
        SuppressMode::Soft => qs,
    };
    let stack = DecoderStack::seeded(
        DecoderConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            points: cfg.points,
            depth: d,
        },
        &mut rng,
    )?;
    let run = stack.run(&kept, k_enc, v_enc, (h, w), cfg.suppress)?;
    Ok(DecodeOutputs {
        kept,
        run,
        grid: (h, w),
    })
}

pub fn queries_table(kept: &QuerySet<f32>, grid: (usize, usize)) -> String {
    let mut text = String::from("cell row col score\n");
    for (idx, &cell) in kept.cells.iter().enumerate() {
        let (row, col) = (cell / grid.1, cell % grid.1);
        text.push_str(&format!("{cell} {row} {col} {}\n", kept.scores[idx]));
    }
    text
}

pub fn cost_table(run: &DecoderRun<f32>) -> String {
    let mut text = String::from("layer macs cumulative\n");
    for (i, (&m, &c)) in run
        .cost
        .layer_macs
        .iter()
        .zip(&run.cost.cumulative)
        .enumerate()
    {
        text.push_str(&format!("{i} {m} {c}\n"));
    }
    text
}

pub fn decode_cmd(
    cfg: &PipelineConfig,
    mixed_heat: &Path,
    enc_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    let hm: Tensor32 = read_hmpt(mixed_heat)?;
    let k_enc: Tensor32 = read_hmpt(enc_dir.join("K_enc.hmpt"))?;
    let v_enc: Tensor32 = read_hmpt(enc_dir.join("V_enc.hmpt"))?;
    let out = decode_compute(cfg, &hm, &k_enc, &v_enc)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    for (i, layer) in out.run.layer_outputs.iter().enumerate() {
        write_hmpt(out_dir.join(format!("dec_layer{i}.hmpt")), layer)?;
    }
    std::fs::write(out_dir.join("queries.txt"), queries_table(&out.kept, out.grid))
        .context("writing queries.txt")?;
    std::fs::write(out_dir.join("cost_report.txt"), cost_table(&out.run))
        .context("writing cost_report.txt")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// lsconv

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisChoice {
    X,
    Y,
    Xy,
}

impl std::str::FromStr for AxisChoice {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(AxisChoice::X),
            "y" => Ok(AxisChoice::Y),
            "xy" => Ok(AxisChoice::Xy),
            other => bail!("--axis must be x, y, or xy, got `{other}`"),
        }
    }
}

struct PassWeights {
    kernel: StripKernel<f32>,
    predictor: OffsetPredictor<f32>,
    taps9: Option<[f32; PATH_LEN]>,
}

impl PassWeights {
    fn seeded(cfg: &PipelineConfig, axis: Axis, rng: &mut Rng) -> Self {
        let orientation = match axis {
            Axis::X => Orientation::Horizontal,
            Axis::Y => Orientation::Vertical,
        };
        let kernel = StripKernel::seeded(orientation, rng);
        let predictor = OffsetPredictor::seeded(rng);
        let taps9 = (cfg.taps == 9).then(|| {
            let mut taps = [0f32; PATH_LEN];
            for tap in taps.iter_mut() {
                *tap = rng.uniform_scalar(-1.0, 1.0);
            }
            // same positive-DC-gain convention as the 3-tap kernels
            if taps.iter().sum::<f32>() < 0.0 {
                for tap in taps.iter_mut() {
                    *tap = -*tap;
                }
            }
            taps
        });
        Self { kernel, predictor, taps9 }
    }

    fn apply(
        &self,
        cfg: &PipelineConfig,
        feature: &Tensor32,
        axis: Axis,
    ) -> Result<(Tensor32, f32)> {
        match &self.taps9 {
            Some(taps) => {
                let offsets = predict_offsets(feature, &self.predictor)?;
                let snake = snake_conv_full(feature, taps, &offsets, axis, cfg.unit_shift)?;
                let linear = linear_conv(feature, &self.kernel, axis)?;
                let fused = fuse_paths(&snake, &linear, cfg.fusion_w)?;
                Ok((fused, continuity_penalty(&offsets)))
            }
            None => Ok(dual_path(
                feature,
                &self.kernel,
                &self.predictor,
                axis,
                cfg.fusion_w,
                cfg.unit_shift,
            )?),
        }
    }
}

/// Applies the dual-path operator to a rank-2 map or per channel of a rank-3
/// tensor. `xy` runs the x pass then the y pass on its output. Per-pass
/// weights are seeded once and shared by all channels. Returns the processed
/// tensor and the summed continuity penalty.
pub fn lsconv_compute(
    cfg: &PipelineConfig,
    feature: &Tensor32,
    axis: AxisChoice,
) -> Result<(Tensor32, f32)> {
    let mut rng = Rng::for_stage(cfg.seed, "lsconv");
    let passes: &[Axis] = match axis {
        AxisChoice::X => &[Axis::X],
        AxisChoice::Y => &[Axis::Y],
        AxisChoice::Xy => &[Axis::X, Axis::Y],
    };
    let mut channels: Vec<Tensor32> = match feature.rank() {
        2 => vec![feature.clone()],
        3 => {
            let (k, h, w) = feature.dims3("lsconv")?;
            let plane = h * w;
            (0..k)
                .map(|c| {
                    Tensor::new(
                        vec![h, w],
                        feature.data()[c * plane..(c + 1) * plane].to_vec(),
                    )
                })
                .collect::<std::result::Result<_, _>>()?
        }
        r => bail!("lsconv expects a rank-2 or rank-3 feature tensor, got rank {r}"),
    };

    let mut penalty = 0f64;
    for &pass in passes {
        let weights = PassWeights::seeded(cfg, pass, &mut rng);
        for map in channels.iter_mut() {
            let (fused, p) = weights.apply(cfg, map, pass)?;
            penalty += p as f64;
            *map = fused;
        }
    }

    let out = if feature.rank() == 2 {
        channels.pop().expect("one map")
    } else {
        let shape = feature.shape().to_vec();
        let mut data = Vec::with_capacity(feature.len());
        for map in &channels {
            data.extend_from_slice(map.data());
        }
        Tensor::new(shape, data)?
    };
    Ok((out, penalty as f32))
}

pub fn lsconv_cmd(
    cfg: &PipelineConfig,
    feature: &Path,
    axis: AxisChoice,
    out: &Path,
    penalty_out: &Path,
) -> Result<()> {
    let f: Tensor32 = read_hmpt(feature)?;
    let (g, penalty) = lsconv_compute(cfg, &f, axis)?;
    write_hmpt(out, &g)?;
    std::fs::write(penalty_out, format!("continuity_penalty={penalty}\n"))
        .with_context(|| format!("writing {}", penalty_out.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// render

pub fn render_cmd(
    cfg: &PipelineConfig,
    heatmap: &Path,
    base: Option<&Path>,
    out: &Path,
    raw: bool,
) -> Result<()> {
    let heat: Tensor32 = read_hmpt(heatmap)?;
    let heat = if raw {
        let outside = heat
            .data()
            .iter()
            .filter(|v| !(0.0..=1.0).contains(*v))
            .count();
        if outside > 0 {
            eprintln!(
                "warning: {outside} heatmap values fall outside [0, 1]; clamping to the ramp"
            );
        }
        heat.map(|v| v.clamp(0.0, 1.0))
    } else {
        normalize_heatmap(&heat)
    };
    let mut body = render_body(&heat, cfg.scale, cfg.upscale)?;
    if let Some(base_path) = base {
        let base_img = read_ppm(base_path)?;
        ensure!(
            (base_img.width(), base_img.height()) == (body.width(), body.height()),
            "base image is {}x{} but the rendered body is {}x{}",
            base_img.width(),
            base_img.height(),
            body.width(),
            body.height()
        );
        body = overlay(&base_img, &body, cfg.alpha)?;
    }
    write_ppm(out, &append_heatbar(&body))?;
    Ok(())
}
