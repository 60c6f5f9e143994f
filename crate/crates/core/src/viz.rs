//! Colormapped raster rendering of heatmaps, with a heatbar legend, plus
//! binary PPM (P6) reading and writing. PPM was picked so output bytes are
//! testable without codec dependencies.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::resize_bilinear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Width in pixels of the heatbar column appended to rendered heatmaps.
pub const HEATBAR_WIDTH: usize = 16;

/// Plain RGB8 image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; 3 * width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "pixel buffer length {} != 3 * {width} * {height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let off = 3 * (y * self.width + x);
        [self.pixels[off], self.pixels[off + 1], self.pixels[off + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let off = 3 * (y * self.width + x);
        self.pixels[off..off + 3].copy_from_slice(&rgb);
    }
}

const KNOTS: [[f64; 3]; 5] = [
    [0.0, 0.0, 255.0], // cold
    [0.0, 255.0, 255.0],
    [0.0, 255.0, 0.0],
    [255.0, 255.0, 0.0],
    [255.0, 0.0, 0.0], // hot
];

/// Position along the ramp as (segment index, in-segment fraction); the pair
/// is lexicographically monotone in v.
pub fn ramp_coord(v: f64) -> (usize, f64) {
    let v = v.clamp(0.0, 1.0);
    let t = v * 4.0;
    let seg = (t.floor() as usize).min(3);
    (seg, t - seg as f64)
}

/// Piecewise-linear blue -> cyan -> green -> yellow -> red map with knots at
/// v in {0, 0.25, 0.5, 0.75, 1}. Inputs clamp to [0, 1]; channel values round
/// half up.
pub fn colormap<T: Scalar>(v: T) -> [u8; 3] {
    let (seg, frac) = ramp_coord(v.as_f64());
    let lo = KNOTS[seg];
    let hi = KNOTS[seg + 1];
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = round_half_up(lo[c] + frac * (hi[c] - lo[c]));
    }
    rgb
}

fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Body upscale flavor for renders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpscaleMode {
    #[default]
    Bilinear,
    Nearest,
}

/// Colormapped upscaled body only, without the heatbar.
pub fn render_body<T: Scalar>(h: &Tensor<T>, scale: usize, mode: UpscaleMode) -> Result<RasterImage> {
    if scale == 0 {
        return Err(Error::invalid("render scale must be >= 1"));
    }
    let (rows, cols) = h.dims2("render_heatmap")?;
    let (bh, bw) = (rows * scale, cols * scale);
    let body: Tensor<T> = match mode {
        UpscaleMode::Bilinear => resize_bilinear(h, bh, bw)?,
        UpscaleMode::Nearest => {
            let mut data = Vec::with_capacity(bh * bw);
            for r in 0..bh {
                for c in 0..bw {
                    data.push(h.get2(r / scale, c / scale));
                }
            }
            Tensor::new(vec![bh, bw], data)?
        }
    };
    let mut img = RasterImage::new(bw, bh);
    for y in 0..bh {
        for x in 0..bw {
            img.set(x, y, colormap(body.get2(y, x)));
        }
    }
    Ok(img)
}

/// Appends the 16-pixel-wide full-ramp heatbar (hot at the top) to the right
/// edge of an image.
pub fn append_heatbar(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width, img.height);
    let mut out = RasterImage::new(w + HEATBAR_WIDTH, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(x, y));
        }
        let v = if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 1.0 };
        let bar = colormap(v);
        for x in 0..HEATBAR_WIDTH {
            out.set(w + x, y, bar);
        }
    }
    out
}

/// Renders a normalized (H, W) heatmap at an integer scale and appends a
/// 16-pixel-wide vertical heatbar (hot at the top) on the right edge. The
/// image is (W * scale + 16) x (H * scale).
pub fn render_heatmap<T: Scalar>(
    h: &Tensor<T>,
    scale: usize,
    mode: UpscaleMode,
) -> Result<RasterImage> {
    Ok(append_heatbar(&render_body(h, scale, mode)?))
}

/// Per-channel convex blend round(alpha * heat + (1 - alpha) * base).
pub fn overlay(base: &RasterImage, heat: &RasterImage, alpha: f32) -> Result<RasterImage> {
    if (base.width, base.height) != (heat.width, heat.height) {
        return Err(Error::shape(
            "overlay",
            [base.width, base.height],
            &[heat.width, heat.height],
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} outside [0, 1]")));
    }
    let a = alpha as f64;
    let pixels = base
        .pixels
        .iter()
        .zip(&heat.pixels)
        .map(|(&b, &h)| round_half_up(a * h as f64 + (1.0 - a) * b as f64))
        .collect();
    RasterImage::from_pixels(base.width, base.height, pixels)
}

/// Writes a binary P6 PPM: `P6\n<w> <h>\n255\n` followed by raw RGB rows.
pub fn write_ppm(path: impl AsRef<Path>, img: &RasterImage) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a binary P6 PPM with maxval 255. `#` comments are tolerated in the
/// header.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let fail = |reason: &str| Error::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        if pos >= bytes.len() {
            return Err(fail("truncated header"));
        }
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => pos += 1,
            _ => {
                let start = pos;
                while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                fields.push(
                    std::str::from_utf8(&bytes[start..pos])
                        .map_err(|_| fail("non-ascii header"))?
                        .to_string(),
                );
            }
        }
    }
    if fields[0] != "P6" {
        return Err(fail("not a P6 file"));
    }
    let width: usize = fields[1].parse().map_err(|_| fail("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| fail("bad height"))?;
    if fields[3] != "255" {
        return Err(fail("maxval must be 255"));
    }
    pos += 1; // single whitespace byte after maxval
    let expect = 3 * width * height;
    if bytes.len() - pos != expect {
        return Err(fail(&format!(
            "payload length {} != {expect}",
            bytes.len() - pos
        )));
    }
    RasterImage::from_pixels(width, height, bytes[pos..].to_vec())
}
