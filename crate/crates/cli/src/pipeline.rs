//! The end-to-end pipeline: synthetic scene, dual-path convolution of the
//! activations, heatmap triplet, mask-gated positional encoding, encoder
//! Q/K/V, decoder layers, renders, and a self-verifying manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use hmpe_core::heatmap::normalize_heatmap;
use hmpe_core::io::write_hmpt;
use hmpe_core::tensor::Tensor;
use hmpe_core::viz::{append_heatbar, overlay, render_body, write_ppm};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::stages::{
    compute_triplet, cost_table, decode_compute, encode_compute, lsconv_compute, mask_pe_compute,
    queries_table, AxisChoice,
};
use crate::synth::{image_tensor_to_raster, synth, write_scene};

pub const MANIFEST: &str = "manifest.txt";

pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    // synth
    let scene = synth(cfg).context("stage synth")?;
    let (class_head, bbox_head) = crate::synth::seeded_heads(cfg);
    write_scene(out_dir, &scene, &class_head, &bbox_head).context("stage synth")?;

    // lsconv feature engineering over the activations
    let (processed, penalty) = lsconv_compute(cfg, &scene.activations, AxisChoice::Xy)
        .context("stage lsconv")?;
    write_hmpt(out_dir.join("lsconv_activations.hmpt"), &processed).context("stage lsconv")?;
    std::fs::write(
        out_dir.join("lsconv_penalty.txt"),
        format!("continuity_penalty={penalty}\n"),
    )
    .context("stage lsconv")?;

    // heatmap triplet from the processed activations
    let triplet =
        compute_triplet(cfg, &processed, &class_head, &bbox_head).context("stage heatmaps")?;
    (|| -> Result<()> {
        write_hmpt(out_dir.join("h_class.hmpt"), &triplet.h_class)?;
        write_hmpt(out_dir.join("h_bbox.hmpt"), &triplet.h_bbox)?;
        write_hmpt(out_dir.join("h_mixed.hmpt"), &triplet.h_mixed)?;
        Ok(())
    })()
    .context("stage heatmaps")?;

    // mask + gated positional encoding from the mixed heatmap
    let (mask, gated) =
        mask_pe_compute(&triplet.h_mixed, cfg.tau, cfg.depth).context("stage mask-pe")?;
    write_hmpt(out_dir.join("mask.hmpt"), mask.mask()).context("stage mask-pe")?;
    write_hmpt(out_dir.join("pe_masked.hmpt"), gated.table()).context("stage mask-pe")?;

    // encoder fusion
    let enc = encode_compute(cfg, &triplet.h_class, &triplet.h_bbox).context("stage encode")?;
    (|| -> Result<()> {
        write_hmpt(out_dir.join("Q_enc.hmpt"), &enc.q_enc)?;
        write_hmpt(out_dir.join("K_enc.hmpt"), &enc.k_enc)?;
        write_hmpt(out_dir.join("V_enc.hmpt"), &enc.v_enc)?;
        write_hmpt(out_dir.join("enc_out.hmpt"), &enc.enc_out)?;
        write_hmpt(out_dir.join("attn_weights.hmpt"), &enc.attn_weights)?;
        Ok(())
    })()
    .context("stage encode")?;

    // decoder
    let dec =
        decode_compute(cfg, &triplet.h_mixed, &enc.k_enc, &enc.v_enc).context("stage decode")?;
    (|| -> Result<()> {
        for (i, layer) in dec.run.layer_outputs.iter().enumerate() {
            write_hmpt(out_dir.join(format!("dec_layer{i}.hmpt")), layer)?;
        }
        std::fs::write(out_dir.join("queries.txt"), queries_table(&dec.kept, dec.grid))?;
        std::fs::write(out_dir.join("cost_report.txt"), cost_table(&dec.run))?;
        Ok(())
    })()
    .context("stage decode")?;

    // renders
    (|| -> Result<()> {
        for (name, map) in [
            ("render_class.ppm", &triplet.h_class),
            ("render_bbox.ppm", &triplet.h_bbox),
            ("render_mixed.ppm", &triplet.h_mixed),
        ] {
            let body = render_body(&normalize_heatmap(map), cfg.scale, cfg.upscale)?;
            write_ppm(out_dir.join(name), &append_heatbar(&body))?;
        }
        // masked-embedding magnitude map
        let (h, w) = triplet.h_mixed.dims2("render")?;
        let d = cfg.depth;
        let mut mag = Vec::with_capacity(h * w);
        for cell in 0..h * w {
            let row = &gated.table().data()[cell * d..(cell + 1) * d];
            let ss: f64 = row.iter().map(|v| (*v as f64) * (*v as f64)).sum();
            mag.push((ss / d as f64).sqrt() as f32);
        }
        let mag = normalize_heatmap(&Tensor::new(vec![h, w], mag)?);
        let body = render_body(&mag, cfg.scale, cfg.upscale)?;
        write_ppm(out_dir.join("render_pe.ppm"), &append_heatbar(&body))?;
        // mixed heatmap over the synthetic image
        let base = image_tensor_to_raster(&scene.image)?;
        let heat_body = render_body(&normalize_heatmap(&triplet.h_mixed), cfg.scale, cfg.upscale)?;
        let blended = overlay(&base, &heat_body, cfg.alpha)?;
        write_ppm(out_dir.join("overlay.ppm"), &append_heatbar(&blended))?;
        Ok(())
    })()
    .context("stage render")?;

    write_manifest(out_dir).context("stage manifest")?;
    Ok(())
}

/// Writes `manifest.txt`: one `sha256  path` line per artifact, sorted by
/// path. The manifest is not listed in itself.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut entries = manifest_entries(dir)?;
    entries.sort();
    let mut text = String::new();
    for (path, hash) in &entries {
        writeln!(text, "{hash}  {path}").unwrap();
    }
    std::fs::write(dir.join(MANIFEST), text)
        .with_context(|| format!("writing {}", dir.join(MANIFEST).display()))?;
    Ok(())
}

fn manifest_entries(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .context("non-utf8 file name")?;
        if name == MANIFEST {
            continue;
        }
        let bytes = std::fs::read(&path)?;
        out.push((name, hex_digest(&bytes)));
    }
    Ok(out)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

/// Recomputes every hash in a manifest and checks it against the directory
/// contents. Returns the list of mismatched paths (empty means verified).
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))
        .with_context(|| format!("reading {}", dir.join(MANIFEST).display()))?;
    let mut bad = Vec::new();
    for line in text.lines() {
        let Some((hash, name)) = line.split_once("  ") else {
            bad.push(format!("malformed line: {line}"));
            continue;
        };
        let bytes = match std::fs::read(dir.join(name)) {
            Ok(b) => b,
            Err(_) => {
                bad.push(format!("missing: {name}"));
                continue;
            }
        };
        if hex_digest(&bytes) != hash {
            bad.push(name.to_string());
        }
    }
    Ok(bad)
}

/// Convenience for tests: the manifest file's raw bytes.
pub fn manifest_bytes(dir: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(dir.join(MANIFEST))?)
}

/// Runs the pipeline in a fresh subdirectory of `base` named by the seed.
pub fn pipeline_dir(base: &Path, tag: &str) -> PathBuf {
    base.join(tag)
}

/// Checks that the decoder retained at least one query whose grid cell lies
/// inside the configured target box, using cell-center coordinates.
pub fn kept_query_in_box(cfg: &PipelineConfig, out_dir: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(out_dir.join("queries.txt"))?;
    let [cx, cy, w, h] = cfg.target;
    let (rows, cols) = (cfg.height as f32, cfg.width as f32);
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        ensure!(fields.len() == 4, "bad queries.txt line: {line}");
        let row: f32 = fields[1].parse()?;
        let col: f32 = fields[2].parse()?;
        let x = (col + 0.5) / cols;
        let y = (row + 0.5) / rows;
        if (x - cx).abs() <= w / 2.0 && (y - cy).abs() <= h / 2.0 {
            return Ok(true);
        }
    }
    Ok(false)
}
