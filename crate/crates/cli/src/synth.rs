//! Synthetic scenes and seeded toy heads: the stand-in for a backbone when
//! exercising the pipeline end to end.

use std::path::Path;

use anyhow::{Context, Result};
use hmpe_core::heads::{BboxHead, BoxTarget, ClassHead};
use hmpe_core::io::{read_hmpt, read_kv, write_hmpt, write_kv};
use hmpe_core::tensor::Tensor;
use hmpe_core::viz::RasterImage;
use hmpe_core::{Rng, Tensor32};

use crate::config::PipelineConfig;

/// Deterministic stand-in for backbone output: a Gaussian activation bump
/// centered on the target box plus seeded per-channel noise, and an RGB
/// rendering of the channel mean at render scale.
pub struct SyntheticScene {
    pub image: Tensor32,
    pub activations: Tensor32,
    pub target: BoxTarget<f32>,
}

pub fn synth(cfg: &PipelineConfig) -> Result<SyntheticScene> {
    let target = cfg.box_target()?;
    let (h, w, k) = (cfg.height, cfg.width, cfg.channels);
    let mut rng = Rng::for_stage(cfg.seed, "synth");

    let ci = target.cy as f64 * (h - 1) as f64;
    let cj = target.cx as f64 * (w - 1) as f64;
    let sigma = (0.25 * (target.w as f64 * w as f64).min(target.h as f64 * h as f64)).max(1.0);
    let inv = 1.0 / (2.0 * sigma * sigma);

    let mut data = Vec::with_capacity(k * h * w);
    for _ in 0..k {
        let amp = rng.uniform(0.6, 1.0);
        for i in 0..h {
            for j in 0..w {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                let bump = amp * (-d2 * inv).exp();
                data.push((bump + 0.05 * rng.uniform(-1.0, 1.0)) as f32);
            }
        }
    }
    let activations = Tensor::new(vec![k, h, w], data)?;

    // channel mean, normalized and upscaled, drives a blue-to-warm image
    let plane = h * w;
    let mut mean = vec![0f32; plane];
    for c in 0..k {
        for p in 0..plane {
            mean[p] += activations.data()[c * plane + p] / k as f32;
        }
    }
    let mean = hmpe_core::heatmap::normalize_heatmap(&Tensor::new(vec![h, w], mean)?);
    let big = hmpe_core::numerics::resize_bilinear(&mean, h * cfg.scale, w * cfg.scale)?;
    let hw = big.len();
    let mut img = Vec::with_capacity(3 * hw);
    for chan in 0..3 {
        for v in big.data() {
            let v = *v;
            img.push(match chan {
                0 => v,
                1 => 0.4 + 0.2 * v,
                _ => 1.0 - v,
            });
        }
    }
    let image = Tensor::new(vec![3, h * cfg.scale, w * cfg.scale], img)?;

    Ok(SyntheticScene {
        image,
        activations,
        target,
    })
}

/// Seeded toy heads sized for the configured activation tensor. Weight
/// bounds shrink with the element count so preactivations stay in the
/// responsive region of the squashing nonlinearities. The class bias is kept
/// negative: the second-order term of the gradient weighting carries the
/// sign of -tanh(s), so a negative preactivation makes channel importances
/// positive and the heatmap track activation evidence, standing in for the
/// sign alignment a trained head would have.
pub fn seeded_heads(cfg: &PipelineConfig) -> (ClassHead<f32>, BboxHead<f32>) {
    let (h, w, k) = (cfg.height, cfg.width, cfg.channels);
    let mut rng = Rng::for_stage(cfg.seed, "heads");
    let bound = 1.0 / ((k * h * w) as f64).sqrt();
    let class = ClassHead::new(
        rng.uniform_tensor([k, h, w], -bound, bound),
        rng.uniform_scalar(-0.6, -0.4),
    );
    let bbox = BboxHead::new(
        rng.uniform_tensor([4, k, h, w], -bound, bound),
        [
            rng.uniform_scalar(-0.2, 0.2),
            rng.uniform_scalar(-0.2, 0.2),
            rng.uniform_scalar(-0.2, 0.2),
            rng.uniform_scalar(-0.2, 0.2),
        ],
        cfg.huber_delta,
    )
    .expect("seeded bbox head shape");
    (class, bbox)
}

/// Converts a (3, H, W) tensor of [0, 1] values to an RGB raster,
/// rounding half up.
pub fn image_tensor_to_raster(t: &Tensor32) -> Result<RasterImage> {
    let (c, h, w) = t.dims3("image_tensor")?;
    anyhow::ensure!(c == 3, "image tensor must have 3 channels, got {c}");
    let plane = h * w;
    let mut pixels = vec![0u8; 3 * plane];
    for chan in 0..3 {
        for p in 0..plane {
            let v = (t.data()[chan * plane + p].clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor();
            pixels[3 * p + chan] = v as u8;
        }
    }
    Ok(RasterImage::from_pixels(w, h, pixels)?)
}

/// Writes the scene plus seeded heads into a directory: activations, image
/// (tensor and PPM), target sidecar, and both head files.
pub fn write_scene(
    out_dir: &Path,
    scene: &SyntheticScene,
    class: &ClassHead<f32>,
    bbox: &BboxHead<f32>,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_hmpt(out_dir.join("activations.hmpt"), &scene.activations)?;
    write_hmpt(out_dir.join("image.hmpt"), &scene.image)?;
    hmpe_core::viz::write_ppm(out_dir.join("image.ppm"), &image_tensor_to_raster(&scene.image)?)?;
    write_kv(
        out_dir.join("target.txt"),
        &[
            ("cx", scene.target.cx.to_string()),
            ("cy", scene.target.cy.to_string()),
            ("w", scene.target.w.to_string()),
            ("h", scene.target.h.to_string()),
        ],
    )?;
    write_class_head(&out_dir.join("class_head.hmpt"), class)?;
    write_bbox_head(&out_dir.join("bbox_head.hmpt"), bbox)?;
    Ok(())
}

pub fn write_class_head(path: &Path, head: &ClassHead<f32>) -> Result<()> {
    write_hmpt(path, head.weights())?;
    write_kv(
        path.with_extension("meta"),
        &[("bias", head.bias().to_string())],
    )?;
    Ok(())
}

pub fn read_class_head(path: &Path) -> Result<ClassHead<f32>> {
    let weights: Tensor32 = read_hmpt(path)?;
    let meta = read_kv(path.with_extension("meta"))?;
    let bias = kv_get(&meta, "bias", path)?;
    Ok(ClassHead::new(weights, bias))
}

pub fn write_bbox_head(path: &Path, head: &BboxHead<f32>) -> Result<()> {
    write_hmpt(path, head.weights())?;
    let bias = head
        .bias()
        .map(|b| b.to_string())
        .join(",");
    write_kv(
        path.with_extension("meta"),
        &[("bias", bias), ("delta", head.delta().to_string())],
    )?;
    Ok(())
}

pub fn read_bbox_head(path: &Path) -> Result<BboxHead<f32>> {
    let weights: Tensor32 = read_hmpt(path)?;
    let meta = read_kv(path.with_extension("meta"))?;
    let bias_csv: String = kv_get(&meta, "bias", path)?;
    let parts: Vec<f32> = bias_csv
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{}: bad bias list `{bias_csv}`", path.display()))?;
    anyhow::ensure!(parts.len() == 4, "{}: bias must have 4 entries", path.display());
    let delta = kv_get(&meta, "delta", path)?;
    Ok(BboxHead::new(weights, [parts[0], parts[1], parts[2], parts[3]], delta)?)
}

fn kv_get<T: std::str::FromStr>(pairs: &[(String, String)], key: &str, path: &Path) -> Result<T> {
    let raw = pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .with_context(|| format!("{}: missing sidecar key '{key}'", path.display()))?;
    raw.parse()
        .map_err(|_| anyhow::anyhow!("{}: cannot parse '{key}' = `{raw}`", path.display()))
}
