//! Linear-snake convolution: a dual-path operator pairing a serpentine
//! sampling path driven by cumulative deformation offsets with an axis-aligned
//! strip kernel, fused by a convex weight.
//!
//! Path geometry for the x-axis (y-axis swaps the roles of x and y): around a
//! center cell, nine positions are laid out for c in {0..4} to each side. The
//! plus branch sits at (x + c + 1, y + cum_plus(c) + 1), the minus branch at
//! (x - c - 1, y + cum_minus(c) - 1), and the center carries the plus branch's
//! c = 0 unit shift. The `unit_shift` flag drops the +-1 constants for the
//! conventional reading. Per-step offsets are tanh-capped at one grid unit
//! before cumulative summation, and sampled displacements clamp to nine grid
//! strides per axis.

use crate::error::{Error, Result};
use crate::numerics::bilinear_sample_raw;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PATH_LEN: usize = 9;
pub const MAX_STRIDES: f64 = 9.0;
const SIDE_STEPS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

impl Orientation {
    pub fn matches(self, axis: Axis) -> bool {
        matches!(
            (self, axis),
            (Orientation::Horizontal, Axis::X) | (Orientation::Vertical, Axis::Y)
        )
    }
}

/// Three-tap strip kernel, 3x1 (horizontal) or 1x3 (vertical).
#[derive(Clone, Copy, Debug)]
pub struct StripKernel<T> {
    pub taps: [T; 3],
    pub orientation: Orientation,
}

impl<T: Scalar> StripKernel<T> {
    pub fn new(taps: [T; 3], orientation: Orientation) -> Self {
        Self { taps, orientation }
    }

    /// Seeded taps with positive DC gain: a kernel is defined up to sign, and
    /// fixing the tap sum positive keeps feature polarity stable across seeds.
    pub fn seeded(orientation: Orientation, rng: &mut Rng) -> Self {
        let mut taps: [T; 3] = [
            rng.uniform_scalar(-1.0, 1.0),
            rng.uniform_scalar(-1.0, 1.0),
            rng.uniform_scalar(-1.0, 1.0),
        ];
        if taps.iter().fold(0.0, |s, t| s + t.as_f64()) < 0.0 {
            for t in taps.iter_mut() {
                *t = -*t;
            }
        }
        Self { taps, orientation }
    }
}

/// Cumulative deformation offsets per cell: slot 4 + c holds the running sum
/// c steps out on the plus side, slot 4 - c on the minus side, slot 4 is the
/// center and always zero. `dy_x_path` carries the y-offsets of the x-axis
/// path, `dx_y_path` the x-offsets of the y-axis path.
#[derive(Clone, Debug)]
pub struct OffsetField<T> {
    dy_x_path: Tensor<T>,
    dx_y_path: Tensor<T>,
}

impl<T: Scalar> OffsetField<T> {
    /// Validates both (H, W, 9) tables and clamps cumulative values to the
    /// nine-stride displacement bound.
    pub fn new(dy_x_path: Tensor<T>, dx_y_path: Tensor<T>) -> Result<Self> {
        let (h, w, slots) = dy_x_path.dims3("offset_field")?;
        if slots != PATH_LEN {
            return Err(Error::shape("offset_field", [h, w, PATH_LEN], dy_x_path.shape()));
        }
        if dx_y_path.shape() != [h, w, PATH_LEN] {
            return Err(Error::shape("offset_field", [h, w, PATH_LEN], dx_y_path.shape()));
        }
        let clamp = |t: &Tensor<T>| {
            t.map(|v| T::of_f64(v.as_f64().clamp(-MAX_STRIDES, MAX_STRIDES)))
        };
        Ok(Self {
            dy_x_path: clamp(&dy_x_path),
            dx_y_path: clamp(&dx_y_path),
        })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            dy_x_path: Tensor::zeros([h, w, PATH_LEN]),
            dx_y_path: Tensor::zeros([h, w, PATH_LEN]),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.dy_x_path.shape()[0], self.dy_x_path.shape()[1])
    }

    pub fn x_path(&self) -> &Tensor<T> {
        &self.dy_x_path
    }

    pub fn y_path(&self) -> &Tensor<T> {
        &self.dx_y_path
    }

    #[inline]
    fn cum(&self, axis: Axis, i: usize, j: usize, slot: usize) -> f64 {
        if slot == 4 {
            return 0.0; // center slot: zero steps accumulated
        }
        match axis {
            Axis::X => self.dy_x_path.get3(i, j, slot).as_f64(),
            Axis::Y => self.dx_y_path.get3(i, j, slot).as_f64(),
        }
    }
}

/// Seeded 3x3 convolutional predictor: one kernel per path (2) and per step
/// (4 to each side), applied to the feature map with replicate padding.
#[derive(Clone, Debug)]
pub struct OffsetPredictor<T> {
    kernels: Tensor<T>, // (2, 8, 3, 3)
}

impl<T: Scalar> OffsetPredictor<T> {
    pub fn new(kernels: Tensor<T>) -> Result<Self> {
        if kernels.shape() != [2, 2 * SIDE_STEPS, 3, 3] {
            return Err(Error::shape("offset_predictor", [2, 8, 3, 3], kernels.shape()));
        }
        Ok(Self { kernels })
    }

    pub fn seeded(rng: &mut Rng) -> Self {
        Self {
            kernels: rng.uniform_tensor([2, 2 * SIDE_STEPS, 3, 3], -0.5, 0.5),
        }
    }

    pub fn zeros() -> Self {
        Self {
            kernels: Tensor::zeros([2, 2 * SIDE_STEPS, 3, 3]),
        }
    }

    fn kernel(&self, path: usize, step: usize) -> [f64; 9] {
        let mut k = [0.0; 9];
        for (idx, kv) in k.iter_mut().enumerate() {
            let base = ((path * 2 * SIDE_STEPS + step) * 3 + idx / 3) * 3 + idx % 3;
            *kv = self.kernels.data()[base].as_f64();
        }
        k
    }
}

/// Runs the predictor: per cell and per step a 3x3 convolution of the feature
/// produces a raw offset, tanh caps it at one grid unit, and the capped steps
/// are cumulatively summed outward from the center (four steps to each side,
/// so |cumulative| <= 4 by construction, inside the nine-stride bound).
pub fn predict_offsets<T: Scalar>(
    feature: &Tensor<T>,
    predictor: &OffsetPredictor<T>,
) -> Result<OffsetField<T>> {
    let (h, w) = feature.dims2("predict_offsets")?;
    let mut tables = [vec![T::zero(); h * w * PATH_LEN], vec![T::zero(); h * w * PATH_LEN]];
    for (path, table) in tables.iter_mut().enumerate() {
        // steps 0..4 = plus side c = 1..4, steps 4..8 = minus side c = 1..4
        let mut step_maps = Vec::with_capacity(2 * SIDE_STEPS);
        for step in 0..2 * SIDE_STEPS {
            let k = predictor.kernel(path, step);
            step_maps.push(conv3x3_replicate(feature, &k));
        }
        for i in 0..h {
            for j in 0..w {
                let base = (i * w + j) * PATH_LEN;
                let mut plus = 0.0f64;
                let mut minus = 0.0f64;
                for c in 1..=SIDE_STEPS {
                    plus += step_maps[c - 1][i * w + j].tanh();
                    minus += step_maps[SIDE_STEPS + c - 1][i * w + j].tanh();
                    table[base + 4 + c] = T::of_f64(plus);
                    table[base + 4 - c] = T::of_f64(minus);
                }
            }
        }
    }
    let [x_table, y_table] = tables;
    OffsetField::new(
        Tensor::assemble([h, w, PATH_LEN], x_table),
        Tensor::assemble([h, w, PATH_LEN], y_table),
    )
}

fn conv3x3_replicate<T: Scalar>(feature: &Tensor<T>, kernel: &[f64; 9]) -> Vec<f64> {
    let (h, w) = (feature.shape()[0], feature.shape()[1]);
    let mut out = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0f64;
            for dr in 0..3usize {
                let r = (i + dr).saturating_sub(1).min(h - 1);
                for dc in 0..3usize {
                    let c = (j + dc).saturating_sub(1).min(w - 1);
                    acc += kernel[dr * 3 + dc] * feature.get2(r, c).as_f64();
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

/// Nine sampling positions ordered along the axis, minus branch first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePath {
    pub positions: [(f64, f64); PATH_LEN],
}

impl SamplePath {
    /// The three centermost positions the 3-tap strip kernel binds to.
    pub fn center_taps(&self) -> [(f64, f64); 3] {
        [self.positions[3], self.positions[4], self.positions[5]]
    }
}

/// X-axis snake path around center cell (i, j), i indexing rows (y) and j
/// columns (x).
pub fn snake_path_x<T: Scalar>(
    center: (usize, usize),
    offsets: &OffsetField<T>,
    unit_shift: bool,
) -> SamplePath {
    build_path(center, offsets, Axis::X, unit_shift)
}

/// Y-axis mirror of [`snake_path_x`] with the roles of x and y exchanged.
pub fn snake_path_y<T: Scalar>(
    center: (usize, usize),
    offsets: &OffsetField<T>,
    unit_shift: bool,
) -> SamplePath {
    build_path(center, offsets, Axis::Y, unit_shift)
}

fn build_path<T: Scalar>(
    center: (usize, usize),
    offsets: &OffsetField<T>,
    axis: Axis,
    unit_shift: bool,
) -> SamplePath {
    let (i, j) = center;
    let (cx, cy) = (j as f64, i as f64);
    let shift = if unit_shift { 1.0 } else { 0.0 };
    let mut positions = [(0.0, 0.0); PATH_LEN];
    for slot in 0..PATH_LEN {
        let c = slot as f64 - 4.0; // signed step count, minus branch < 0
        let cum = offsets.cum(axis, i, j, slot);
        let sign = if slot >= 4 { shift } else { -shift };
        let (x, y) = match axis {
            Axis::X => (cx + c + sign, cy + cum + sign),
            Axis::Y => (cx + cum + sign, cy + c + sign),
        };
        // nine-stride displacement bound per axis, relative to the center
        positions[slot] = (
            cx + (x - cx).clamp(-MAX_STRIDES, MAX_STRIDES),
            cy + (y - cy).clamp(-MAX_STRIDES, MAX_STRIDES),
        );
    }
    SamplePath { positions }
}

/// Serpentine branch: at each cell, bilinearly sample the path's three
/// centermost positions and dot them with the strip kernel taps. Border
/// samples clamp.
pub fn snake_conv<T: Scalar>(
    feature: &Tensor<T>,
    kernel: &StripKernel<T>,
    offsets: &OffsetField<T>,
    axis: Axis,
    unit_shift: bool,
) -> Result<Tensor<T>> {
    if !kernel.orientation.matches(axis) {
        return Err(Error::invalid(format!(
            "kernel orientation {:?} does not match axis {:?}",
            kernel.orientation, axis
        )));
    }
    let (h, w) = feature.dims2("snake_conv")?;
    if offsets.dims() != (h, w) {
        return Err(Error::shape("snake_conv", [h, w], offsets.dy_x_path.shape()));
    }
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let path = build_path((i, j), offsets, axis, unit_shift);
            let mut acc = 0.0f64;
            for (tap, (x, y)) in kernel.taps.iter().zip(path.center_taps()) {
                acc += tap.as_f64() * bilinear_sample_raw(feature.data(), h, w, x, y);
            }
            out.push(T::of_f64(acc));
        }
    }
    Ok(Tensor::assemble([h, w], out))
}

/// Nine-tap variant: dots every path position with a nine-weight kernel.
pub fn snake_conv_full<T: Scalar>(
    feature: &Tensor<T>,
    weights: &[T; PATH_LEN],
    offsets: &OffsetField<T>,
    axis: Axis,
    unit_shift: bool,
) -> Result<Tensor<T>> {
    let (h, w) = feature.dims2("snake_conv_full")?;
    if offsets.dims() != (h, w) {
        return Err(Error::shape("snake_conv_full", [h, w], offsets.dy_x_path.shape()));
    }
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let path = build_path((i, j), offsets, axis, unit_shift);
            let mut acc = 0.0f64;
            for (tap, (x, y)) in weights.iter().zip(path.positions) {
                acc += tap.as_f64() * bilinear_sample_raw(feature.data(), h, w, x, y);
            }
            out.push(T::of_f64(acc));
        }
    }
    Ok(Tensor::assemble([h, w], out))
}

/// Axis-aligned 3-tap convolution with replicate border padding.
pub fn linear_conv<T: Scalar>(
    feature: &Tensor<T>,
    kernel: &StripKernel<T>,
    axis: Axis,
) -> Result<Tensor<T>> {
    if !kernel.orientation.matches(axis) {
        return Err(Error::invalid(format!(
            "kernel orientation {:?} does not match axis {:?}",
            kernel.orientation, axis
        )));
    }
    let (h, w) = feature.dims2("linear_conv")?;
    let taps = kernel.taps.map(|t| t.as_f64());
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let acc = match axis {
                Axis::X => {
                    taps[0] * feature.get2(i, j.saturating_sub(1)).as_f64()
                        + taps[1] * feature.get2(i, j).as_f64()
                        + taps[2] * feature.get2(i, (j + 1).min(w - 1)).as_f64()
                }
                Axis::Y => {
                    taps[0] * feature.get2(i.saturating_sub(1), j).as_f64()
                        + taps[1] * feature.get2(i, j).as_f64()
                        + taps[2] * feature.get2((i + 1).min(h - 1), j).as_f64()
                }
            };
            out.push(T::of_f64(acc));
        }
    }
    Ok(Tensor::assemble([h, w], out))
}

/// Sum of squared second differences of the per-step increments along every
/// path branch; zero exactly when each branch's increments are constant.
pub fn continuity_penalty<T: Scalar>(offsets: &OffsetField<T>) -> T {
    let (h, w) = offsets.dims();
    let mut acc = 0.0f64;
    for axis in [Axis::X, Axis::Y] {
        for i in 0..h {
            for j in 0..w {
                for side in [1i64, -1i64] {
                    let cum_at = |c: i64| {
                        let slot = (4 + side * c) as usize;
                        offsets.cum(axis, i, j, slot)
                    };
                    let mut prev_inc = cum_at(1) - cum_at(0);
                    for c in 2..=SIDE_STEPS as i64 {
                        let inc = cum_at(c) - cum_at(c - 1);
                        let dd = inc - prev_inc;
                        acc += dd * dd;
                        prev_inc = inc;
                    }
                }
            }
        }
    }
    T::of_f64(acc)
}

/// w * snake + (1 - w) * linear, element-wise.
pub fn fuse_paths<T: Scalar>(snake: &Tensor<T>, linear: &Tensor<T>, w: T) -> Result<Tensor<T>> {
    if snake.shape() != linear.shape() {
        return Err(Error::shape("fuse_paths", snake.shape(), linear.shape()));
    }
    if w < T::zero() || w > T::one() {
        return Err(Error::invalid(format!("fusion weight {w} outside [0, 1]")));
    }
    let wf = w.as_f64();
    let data = snake
        .data()
        .iter()
        .zip(linear.data())
        .map(|(s, l)| T::of_f64(wf * s.as_f64() + (1.0 - wf) * l.as_f64()))
        .collect();
    Ok(Tensor::assemble(snake.shape().to_vec(), data))
}

/// Full dual-path pass over one feature map: predicted offsets drive the
/// snake branch, the same kernel runs the linear branch, and the two outputs
/// blend by `fusion_w`. Returns the fused map and the continuity penalty.
pub fn dual_path<T: Scalar>(
    feature: &Tensor<T>,
    kernel: &StripKernel<T>,
    predictor: &OffsetPredictor<T>,
    axis: Axis,
    fusion_w: T,
    unit_shift: bool,
) -> Result<(Tensor<T>, T)> {
    let offsets = predict_offsets(feature, predictor)?;
    let snake = snake_conv(feature, kernel, &offsets, axis, unit_shift)?;
    let linear = linear_conv(feature, kernel, axis)?;
    let fused = fuse_paths(&snake, &linear, fusion_w)?;
    Ok((fused, continuity_penalty(&offsets)))
}
