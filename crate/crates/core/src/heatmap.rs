//! Gradient-weighted detection heatmaps.
//!
//! From an activation tensor A of shape (K, H, W) and the toy heads this
//! builds per-element weighting coefficients alpha (second- plus third-order
//! same-element partials of the head output), per-channel importances beta
//! (alpha aggregated under ReLU-filtered first-order gradients), the class and
//! box heatmaps, and their gated convex mix.

use crate::error::{Error, Result};
use crate::heads::{BboxHead, BoxTarget, ClassHead};
use crate::numerics::DiffOrder;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// alpha (K, H, W) and beta (K) for one head/activation pair.
#[derive(Clone, Debug)]
pub struct GradWeights<T> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
}

/// The three heatmaps on a shared (H, W) grid, plus the gate that mixed them.
#[derive(Clone, Debug)]
pub struct HeatmapTriplet<T> {
    pub h_class: Tensor<T>,
    pub h_bbox: Tensor<T>,
    pub h_mixed: Tensor<T>,
    pub lambda: T,
}

impl<T: Scalar> HeatmapTriplet<T> {
    pub fn new(h_class: Tensor<T>, h_bbox: Tensor<T>, lambda: T) -> Result<Self> {
        let h_mixed = mix_heatmaps(&h_class, &h_bbox, lambda)?;
        Ok(Self { h_class, h_bbox, h_mixed, lambda })
    }
}

/// Which derivative structure feeds the box heatmap: the same second- plus
/// third-order combination the class heatmap uses, or first-order Huber
/// gradients only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BboxGradMode {
    #[default]
    Mixed,
    FirstOrder,
}

/// alpha = d2y/dA^2 + d3y/dA^3 element-wise.
pub fn grad_weight_coeffs<T: Scalar>(head: &ClassHead<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let d2 = head.partials(a, DiffOrder::Second)?;
    let d3 = head.partials(a, DiffOrder::Third)?;
    let data = d2
        .data()
        .iter()
        .zip(d3.data())
        .map(|(x, y)| T::of_f64(x.as_f64() + y.as_f64()))
        .collect();
    Ok(Tensor::assemble(a.shape().to_vec(), data))
}

/// beta[k] = sum_{i,j} alpha[k,i,j] * max(0, grad1[k,i,j]).
pub fn channel_importance<T: Scalar>(alpha: &Tensor<T>, grad1: &Tensor<T>) -> Result<Tensor<T>> {
    if alpha.shape() != grad1.shape() {
        return Err(Error::shape("channel_importance", alpha.shape(), grad1.shape()));
    }
    let (k, h, w) = alpha.dims3("channel_importance")?;
    let plane = h * w;
    let mut beta = Vec::with_capacity(k);
    for c in 0..k {
        let mut acc = 0.0f64;
        for p in 0..plane {
            let g = grad1.data()[c * plane + p].as_f64();
            if g > 0.0 {
                acc += alpha.data()[c * plane + p].as_f64() * g;
            }
        }
        beta.push(T::of_f64(acc));
    }
    Ok(Tensor::assemble([k], beta))
}

/// H(i,j) = ReLU(sum_k beta[k] * A[k,i,j]).
pub fn class_heatmap<T: Scalar>(beta: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, h, w) = a.dims3("class_heatmap")?;
    if beta.shape() != [k] {
        return Err(Error::shape("class_heatmap", [k], beta.shape()));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(plane);
    for p in 0..plane {
        let mut acc = 0.0f64;
        for c in 0..k {
            acc += beta.data()[c].as_f64() * a.data()[c * plane + p].as_f64();
        }
        out.push(T::of_f64(acc.max(0.0)));
    }
    Ok(Tensor::assemble([h, w], out))
}

/// Gradient weights for the class pathway: alpha from the second/third-order
/// combination, beta from ReLU-filtered first-order gradients.
pub fn class_grad_weights<T: Scalar>(head: &ClassHead<T>, a: &Tensor<T>) -> Result<GradWeights<T>> {
    let alpha = grad_weight_coeffs(head, a)?;
    let grad1 = head.partials(a, DiffOrder::First)?;
    let beta = channel_importance(&alpha, &grad1)?;
    Ok(GradWeights { alpha, beta })
}

/// Same pipeline with the regression loss in place of the confidence score.
pub fn bbox_heatmap<T: Scalar>(
    head: &BboxHead<T>,
    a: &Tensor<T>,
    target: &BoxTarget<T>,
    mode: BboxGradMode,
) -> Result<Tensor<T>> {
    let grad1 = head.reg_partials(a, target, DiffOrder::First)?;
    let alpha = match mode {
        BboxGradMode::Mixed => {
            let d2 = head.reg_partials(a, target, DiffOrder::Second)?;
            let d3 = head.reg_partials(a, target, DiffOrder::Third)?;
            let data = d2
                .data()
                .iter()
                .zip(d3.data())
                .map(|(x, y)| T::of_f64(x.as_f64() + y.as_f64()))
                .collect();
            Tensor::assemble(a.shape().to_vec(), data)
        }
        BboxGradMode::FirstOrder => grad1.clone(),
    };
    let beta = channel_importance(&alpha, &grad1)?;
    class_heatmap(&beta, a)
}

/// H_mixed = lambda * H_class + (1 - lambda) * H_bbox.
pub fn mix_heatmaps<T: Scalar>(
    h_class: &Tensor<T>,
    h_bbox: &Tensor<T>,
    lambda: T,
) -> Result<Tensor<T>> {
    if h_class.shape() != h_bbox.shape() {
        return Err(Error::shape("mix_heatmaps", h_class.shape(), h_bbox.shape()));
    }
    if lambda < T::zero() || lambda > T::one() {
        return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
    }
    let l = lambda.as_f64();
    let data = h_class
        .data()
        .iter()
        .zip(h_bbox.data())
        .map(|(c, b)| T::of_f64(l * c.as_f64() + (1.0 - l) * b.as_f64()))
        .collect();
    Ok(Tensor::assemble(h_class.shape().to_vec(), data))
}

/// Min-max rescale to [0, 1]; a constant map degrades to all zeros.
pub fn normalize_heatmap<T: Scalar>(h: &Tensor<T>) -> Tensor<T> {
    let min = h.min_value().as_f64();
    let max = h.max_value().as_f64();
    if max - min <= 0.0 {
        return Tensor::zeros(h.shape().to_vec());
    }
    let span = max - min;
    h.map(|v| T::of_f64((v.as_f64() - min) / span))
}

/// Full run from activations to the gated triplet.
pub fn heatmap_triplet<T: Scalar>(
    class_head: &ClassHead<T>,
    bbox_head: &BboxHead<T>,
    a: &Tensor<T>,
    target: &BoxTarget<T>,
    lambda: T,
    mode: BboxGradMode,
) -> Result<HeatmapTriplet<T>> {
    let weights = class_grad_weights(class_head, a)?;
    let h_class = class_heatmap(&weights.beta, a)?;
    let h_bbox = bbox_heatmap(bbox_head, a, target, mode)?;
    HeatmapTriplet::new(h_class, h_bbox, lambda)
}
