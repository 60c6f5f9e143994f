//! Binary mask filter and mask-gated sinusoidal positional encoding.
//!
//! Cells of a normalized heatmap strictly above the heat threshold tau are
//! "hot" and keep their full sinusoidal encoding; the rest are "cold" and have
//! their encoding zeroed. With tau = 0 the rule degenerates to masking exactly
//! the zero-heat cells.
//!
//! Note on symbols: the heat threshold tau and the per-depth temperatures
//! tau_d = 10000^(2d/D) are unrelated quantities that happen to share a
//! letter; this module houses both.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binary (H, W) spatial filter; every element is exactly 0.0 or 1.0.
#[derive(Clone, Debug)]
pub struct MaskFilter<T> {
    mask: Tensor<T>,
    tau: T,
}

impl<T: Scalar> MaskFilter<T> {
    /// Wraps an already-binary (H, W) tensor; every element must be exactly
    /// 0.0 or 1.0.
    pub fn from_binary(mask: Tensor<T>, tau: T) -> Result<Self> {
        let _ = mask.dims2("mask_filter")?;
        if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::invalid("mask elements must be exactly 0 or 1"));
        }
        Ok(Self { mask, tau })
    }

    pub fn mask(&self) -> &Tensor<T> {
        &self.mask
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mask.shape()[0], self.mask.shape()[1])
    }

    #[inline]
    pub fn is_hot(&self, i: usize, j: usize) -> bool {
        self.mask.get2(i, j) == T::one()
    }
}

/// Sinusoidal positional encoding table of shape (H, W, D).
#[derive(Clone, Debug)]
pub struct PosEncoding<T> {
    pe: Tensor<T>,
}

impl<T: Scalar> PosEncoding<T> {
    pub fn table(&self) -> &Tensor<T> {
        &self.pe
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.pe.shape()[0], self.pe.shape()[1])
    }

    pub fn depth(&self) -> usize {
        self.pe.shape()[2]
    }

    /// The D-slot encoding of cell (i, j).
    pub fn at(&self, i: usize, j: usize) -> &[T] {
        let (_, w) = self.dims();
        let d = self.depth();
        let off = (i * w + j) * d;
        &self.pe.data()[off..off + d]
    }
}

/// mask(i,j) = 1 iff h(i,j) > tau, for a heatmap already normalized to [0,1].
pub fn mask_from_heatmap<T: Scalar>(h: &Tensor<T>, tau: T) -> Result<MaskFilter<T>> {
    let _ = h.dims2("mask_from_heatmap")?;
    if tau < T::zero() || tau >= T::one() {
        return Err(Error::invalid(format!("tau = {tau} outside [0, 1)")));
    }
    let mask = h.map(|v| if v > tau { T::one() } else { T::zero() });
    Ok(MaskFilter { mask, tau })
}

/// Per-depth temperature tau_d = 10000^(2d/D) for d in 0..D/2.
pub fn pe_temperature(d: usize, depth: usize) -> f64 {
    10000f64.powf(2.0 * d as f64 / depth as f64)
}

/// Sinusoidal table pe[i,j,2d] = pe[i,j,2d+1] = sin(i/tau_d) + cos(j/tau_d).
///
/// Each frequency fills two adjacent depth slots so the table width matches
/// the embedding width D consumed downstream.
pub fn sinusoidal_pe<T: Scalar>(h: usize, w: usize, depth: usize) -> Result<PosEncoding<T>> {
    if depth < 2 || depth % 2 != 0 {
        return Err(Error::invalid(format!("PE depth must be even and >= 2, got {depth}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("PE grid dims must be positive"));
    }
    let half = depth / 2;
    let temps: Vec<f64> = (0..half).map(|d| pe_temperature(d, depth)).collect();
    let mut data = Vec::with_capacity(h * w * depth);
    for i in 0..h {
        for j in 0..w {
            for t in &temps {
                let v = T::of_f64((i as f64 / t).sin() + (j as f64 / t).cos());
                data.push(v);
                data.push(v);
            }
        }
    }
    Ok(PosEncoding {
        pe: Tensor::assemble([h, w, depth], data),
    })
}

/// Hadamard gate: rows where mask = 1 are copied bit-for-bit, rows where
/// mask = 0 become exactly zero.
pub fn masked_pe<T: Scalar>(pe: &PosEncoding<T>, mask: &MaskFilter<T>) -> Result<PosEncoding<T>> {
    let (h, w) = pe.dims();
    if mask.dims() != (h, w) {
        return Err(Error::shape("masked_pe", [h, w], mask.mask().shape()));
    }
    let d = pe.depth();
    let src = pe.pe.data();
    let mut data = vec![T::zero(); src.len()];
    for i in 0..h {
        for j in 0..w {
            if mask.is_hot(i, j) {
                let off = (i * w + j) * d;
                data[off..off + d].copy_from_slice(&src[off..off + d]);
            }
        }
    }
    Ok(PosEncoding {
        pe: Tensor::assemble([h, w, d], data),
    })
}

/// Disjoint, exhaustive split of the grid into hot and cold cell lists,
/// consistent with [`mask_from_heatmap`] at the same tau.
#[derive(Clone, Debug, Default)]
pub struct RegionPartition {
    pub hot: Vec<(usize, usize)>,
    pub cold: Vec<(usize, usize)>,
}

pub fn classify_regions<T: Scalar>(h: &Tensor<T>, tau: T) -> Result<RegionPartition> {
    let (rows, cols) = h.dims2("classify_regions")?;
    if tau < T::zero() || tau >= T::one() {
        return Err(Error::invalid(format!("tau = {tau} outside [0, 1)")));
    }
    let mut part = RegionPartition::default();
    for i in 0..rows {
        for j in 0..cols {
            if h.get2(i, j) > tau {
                part.hot.push((i, j));
            } else {
                part.cold.push((i, j));
            }
        }
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::normalize_heatmap;
    use crate::rng::Rng;

    #[test]
    fn mask_threshold_rules() {
        let h = Tensor::<f64>::new(vec![1, 2], vec![0.8, 0.2]).unwrap();
        let m = mask_from_heatmap(&h, 0.5).unwrap();
        assert_eq!(m.mask().data(), &[1.0, 0.0]);

        // tau = 0 recovers the zero-heat rule: exact zeros masked out,
        // anything positive kept.
        let h = Tensor::<f64>::new(vec![1, 2], vec![0.0, 1e-6]).unwrap();
        let m = mask_from_heatmap(&h, 0.0).unwrap();
        assert_eq!(m.mask().data(), &[0.0, 1.0]);

        assert!(mask_from_heatmap(&h, 1.0).is_err());
        assert!(mask_from_heatmap(&h, -0.1).is_err());
    }

    #[test]
    fn temperatures_for_depth_4() {
        assert_eq!(pe_temperature(0, 4), 1.0);
        assert_eq!(pe_temperature(1, 4), 100.0);
    }

    #[test]
    fn pe_values_and_bounds() {
        let pe: PosEncoding<f64> = sinusoidal_pe(4, 4, 4).unwrap();
        // origin cell is sin 0 + cos 0 = 1 at every depth
        for d in 0..4 {
            assert_eq!(pe.at(0, 0)[d], 1.0);
        }
        // i=1, j=0, d=0 (tau_0 = 1): sin(1) + cos(0)
        let expect = 1f64.sin() + 1.0;
        assert!((pe.at(1, 0)[0] - expect).abs() < 1e-12);
        assert!((expect - 1.84147).abs() < 1e-5);
        // paired slots
        assert_eq!(pe.at(1, 0)[0], pe.at(1, 0)[1]);
        assert!(pe.table().data().iter().all(|v| (-2.0..=2.0).contains(v)));
        assert!(sinusoidal_pe::<f64>(4, 4, 5).is_err());
        assert!(sinusoidal_pe::<f64>(4, 4, 0).is_err());
    }

    #[test]
    fn masked_pe_identity_zero_and_checkerboard() {
        let pe: PosEncoding<f64> = sinusoidal_pe(4, 4, 6).unwrap();
        let ones = MaskFilter {
            mask: Tensor::full([4, 4], 1.0),
            tau: 0.0,
        };
        let kept = masked_pe(&pe, &ones).unwrap();
        assert!(kept.table().bits_eq(pe.table()));

        let zeros = MaskFilter {
            mask: Tensor::zeros([4, 4]),
            tau: 0.0,
        };
        let gone = masked_pe(&pe, &zeros).unwrap();
        assert!(gone.table().data().iter().all(|&v| v == 0.0));

        let checker = MaskFilter {
            mask: Tensor::new(
                vec![4, 4],
                (0..16).map(|p| ((p / 4 + p % 4) % 2) as f64).collect(),
            )
            .unwrap(),
            tau: 0.0,
        };
        let mixed = masked_pe(&pe, &checker).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for d in 0..6 {
                    let expect = pe.at(i, j)[d] * checker.mask().get2(i, j);
                    assert_eq!(mixed.at(i, j)[d], expect);
                }
            }
        }

        let small = MaskFilter {
            mask: Tensor::zeros([3, 4]),
            tau: 0.0,
        };
        assert!(masked_pe(&pe, &small).is_err());
    }

    #[test]
    fn classify_regions_agrees_with_mask() {
        let h = Tensor::<f64>::new(vec![2, 2], vec![0.9, 0.1, 0.4, 0.7]).unwrap();
        let part = classify_regions(&h, 0.35).unwrap();
        let mask = mask_from_heatmap(&h, 0.35).unwrap();
        assert_eq!(part.hot.len() + part.cold.len(), 4);
        for &(i, j) in &part.hot {
            assert!(mask.is_hot(i, j));
        }
        for &(i, j) in &part.cold {
            assert!(!mask.is_hot(i, j));
        }

        let strictly_pos = Tensor::<f64>::new(vec![1, 3], vec![0.2, 0.5, 1.0]).unwrap();
        assert_eq!(classify_regions(&strictly_pos, 0.0).unwrap().cold.len(), 0);

        let unique_max = Tensor::<f64>::new(vec![1, 3], vec![0.2, 1.0, 0.4]).unwrap();
        let part = classify_regions(&unique_max, 0.99).unwrap();
        assert_eq!(part.hot, vec![(0, 1)]);
    }

    #[test]
    fn hot_sets_nest_as_tau_grows() {
        let mut rng = Rng::new(71);
        let h: Tensor<f64> = rng.uniform_tensor([8, 8], 0.0, 1.0);
        let mut prev_hot: Option<Vec<(usize, usize)>> = None;
        for step in (0..10).rev() {
            let tau = step as f64 / 10.0;
            let hot = classify_regions(&h, tau).unwrap().hot;
            if let Some(smaller) = prev_hot {
                for cell in &smaller {
                    assert!(hot.contains(cell), "hot({}) lost {cell:?}", tau);
                }
            }
            prev_hot = Some(hot);
        }
    }

    #[test]
    fn mask_invariant_under_positive_affine_rescale() {
        let mut rng = Rng::new(83);
        for _ in 0..20 {
            let raw: Tensor<f64> = rng.uniform_tensor([6, 6], -3.0, 3.0);
            let scaled = raw.map(|v| 2.5 * v + 7.0);
            let m1 = mask_from_heatmap(&normalize_heatmap(&raw), 0.35).unwrap();
            let m2 = mask_from_heatmap(&normalize_heatmap(&scaled), 0.35).unwrap();
            assert_eq!(m1.mask().data(), m2.mask().data());
        }
    }
}
