//! Sampling, activation, and finite-difference primitives.
//!
//! Accumulations run in f64 and truncate to the storage scalar on write, so
//! oracle comparisons stay stable across f32/f64 instantiations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Element-wise max(0, x).
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Row-wise softmax of a rank-2 tensor, stabilized by row-max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = x.dims2("softmax_rows")?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::of_f64(e / sum)));
    }
    Ok(Tensor::assemble([rows, cols], out))
}

/// Four-corner bilinear interpolation of a rank-2 map at (x, y), where x runs
/// along columns and y along rows. Out-of-range coordinates clamp to the valid
/// index box (replicate padding), so lattice points reproduce stored values
/// exactly and border behaviour matches the path displacement bound.
pub fn bilinear_sample<T: Scalar>(map: &Tensor<T>, x: f64, y: f64) -> T {
    let (h, w) = map.dims2("bilinear_sample").expect("rank-2 map");
    T::of_f64(bilinear_sample_raw(map.data(), h, w, x, y))
}

#[inline]
pub(crate) fn bilinear_sample_raw<T: Scalar>(
    data: &[T],
    h: usize,
    w: usize,
    x: f64,
    y: f64,
) -> f64 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let v00 = data[y0 * w + x0].as_f64();
    let v01 = data[y0 * w + x1].as_f64();
    let v10 = data[y1 * w + x0].as_f64();
    let v11 = data[y1 * w + x1].as_f64();
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Bilinear resize of a rank-2 map to the given output dims, endpoint-aligned:
/// output corners sample input corners, factor-1 resizes are element-exact,
/// and every output value is a convex combination of input values.
pub fn resize_bilinear<T: Scalar>(map: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = map.dims2("resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear: output dims must be positive"));
    }
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            let v = bilinear_sample_raw(map.data(), h, w, c as f64 * sx, r as f64 * sy);
            out.push(T::of_f64(v));
        }
    }
    Ok(Tensor::assemble([out_h, out_w], out))
}

/// Upsamples a rank-2 map by an integer factor via [`resize_bilinear`].
pub fn upsample_bilinear<T: Scalar>(map: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::invalid("upsample_bilinear: factor must be >= 1"));
    }
    let (h, w) = map.dims2("upsample_bilinear")?;
    resize_bilinear(map, h * factor, w * factor)
}

/// Derivative order for finite differences and closed-form head partials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffOrder {
    First,
    Second,
    Third,
}

impl DiffOrder {
    /// Default step size per order, balancing truncation against round-off.
    pub fn default_step(self) -> f64 {
        match self {
            DiffOrder::First => 1e-4,
            DiffOrder::Second => 1e-3,
            DiffOrder::Third => 5e-2,
        }
    }

    pub fn from_u8(order: u8) -> Result<Self> {
        match order {
            1 => Ok(DiffOrder::First),
            2 => Ok(DiffOrder::Second),
            3 => Ok(DiffOrder::Third),
            other => Err(Error::invalid(format!("derivative order must be 1..=3, got {other}"))),
        }
    }
}

/// Central-difference estimate of the same-element partial
/// d^order f / dx_i^order for every element i. Each element is perturbed
/// independently; cross-partials are never formed.
pub fn finite_diff_grad<T: Scalar>(
    f: impl Fn(&Tensor<T>) -> T,
    x: &Tensor<T>,
    order: DiffOrder,
    h: f64,
) -> Tensor<T> {
    assert!(h > 0.0, "finite difference step must be positive");
    let eval = |point: &mut Tensor<T>, idx: usize, delta: f64| -> f64 {
        let base = x.data()[idx];
        point.data_mut()[idx] = T::of_f64(base.as_f64() + delta);
        let v = f(point).as_f64();
        point.data_mut()[idx] = base;
        v
    };
    let mut point = x.clone();
    let f0 = if order == DiffOrder::Second { f(&point).as_f64() } else { 0.0 };
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let d = match order {
            DiffOrder::First => {
                let (fp, fm) = (eval(&mut point, i, h), eval(&mut point, i, -h));
                (fp - fm) / (2.0 * h)
            }
            DiffOrder::Second => {
                let (fp, fm) = (eval(&mut point, i, h), eval(&mut point, i, -h));
                (fp - 2.0 * f0 + fm) / (h * h)
            }
            DiffOrder::Third => {
                let fp2 = eval(&mut point, i, 2.0 * h);
                let fp1 = eval(&mut point, i, h);
                let fm1 = eval(&mut point, i, -h);
                let fm2 = eval(&mut point, i, -2.0 * h);
                (fp2 - 2.0 * fp1 + 2.0 * fm1 - fm2) / (2.0 * h * h * h)
            }
        };
        grad.push(T::of_f64(d));
    }
    Tensor::assemble(x.shape().to_vec(), grad)
}

/// out = x * W^T + b for W of shape (rows_out, inner) and x of shape
/// (rows_x, inner); the optional bias has length rows_out.
pub fn linear_map<T: Scalar>(
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (out_dim, inner) = w.dims2("linear_map")?;
    let (rows, x_inner) = x.dims2("linear_map")?;
    if inner != x_inner {
        return Err(Error::shape("linear_map", [rows, inner], x.shape()));
    }
    if let Some(bias) = b {
        if bias.shape() != [out_dim] {
            return Err(Error::shape("linear_map bias", [out_dim], bias.shape()));
        }
    }
    let mut out = Vec::with_capacity(rows * out_dim);
    for r in 0..rows {
        let xr = &x.data()[r * inner..(r + 1) * inner];
        for o in 0..out_dim {
            let wr = &w.data()[o * inner..(o + 1) * inner];
            let mut acc = 0.0f64;
            for (xi, wi) in xr.iter().zip(wr.iter()) {
                acc += xi.as_f64() * wi.as_f64();
            }
            if let Some(bias) = b {
                acc += bias.data()[o].as_f64();
            }
            out.push(T::of_f64(acc));
        }
    }
    Ok(Tensor::assemble([rows, out_dim], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t32(&[1], &[-0.5])).data(), &[0.0]);
        assert_eq!(relu(&t32(&[1], &[2.3])).data(), &[2.3]);
        assert_eq!(relu(&t32(&[1], &[0.0])).data(), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t32(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let s = softmax_rows(&t32(&[1, 2], &[1000.0, 1000.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&t32(&[1, 2], &[0.0, 3.0f32.ln()])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-6);
        assert!((s.data()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_under_extreme_magnitudes() {
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let row: Tensor<f32> = rng.uniform_tensor([1, 8], -1e4, 1e4);
            let s = softmax_rows(&row).unwrap();
            let sum: f64 = s.data().iter().map(|v| *v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
            assert!(s.data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn bilinear_lattice_and_midpoint() {
        let map = t32(&[4, 4], &(0..16).map(|v| v as f32).collect::<Vec<_>>());
        // integer coords (x=2, y=3) -> map[3][2]
        assert_eq!(bilinear_sample(&map, 2.0, 3.0), map.get2(3, 2));
        let map = t32(&[1, 2], &[4.0, 6.0]);
        assert_eq!(bilinear_sample(&map, 0.5, 0.0), 5.0);
    }

    #[test]
    fn bilinear_matches_independent_corner_sum() {
        let mut rng = Rng::new(5);
        let map: Tensor<f32> = rng.uniform_tensor([4, 4], -1.0, 1.0);
        let (x, y) = (0.25f64, 0.75f64);
        let (x0, y0) = (0usize, 0usize);
        let expect = (1.0 - 0.75) * ((1.0 - 0.25) * map.get2(y0, x0) as f64 + 0.25 * map.get2(y0, x0 + 1) as f64)
            + 0.75 * ((1.0 - 0.25) * map.get2(y0 + 1, x0) as f64 + 0.25 * map.get2(y0 + 1, x0 + 1) as f64);
        assert!((bilinear_sample(&map, x, y) as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn bilinear_clamps_out_of_range() {
        let map = t32(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(bilinear_sample(&map, -5.0, -5.0), 1.0);
        assert_eq!(bilinear_sample(&map, 10.0, 10.0), 4.0);
    }

    #[test]
    fn bilinear_is_lipschitz_continuous() {
        let mut rng = Rng::new(9);
        let map: Tensor<f32> = rng.uniform_tensor([6, 6], -2.0, 2.0);
        let bound = 2.0 * 2.0; // 2 * max|map|
        for _ in 0..500 {
            let x = rng.uniform(0.0, 5.0);
            let y = rng.uniform(0.0, 5.0);
            let eps = rng.uniform(1e-6, 0.01);
            let a = bilinear_sample(&map, x, y) as f64;
            let b = bilinear_sample(&map, x + eps, y) as f64;
            let c = bilinear_sample(&map, x, y + eps) as f64;
            assert!((a - b).abs() <= bound * eps + 1e-6);
            assert!((a - c).abs() <= bound * eps + 1e-6);
        }
    }

    #[test]
    fn upsample_constant_and_identity() {
        let map = t32(&[2, 3], &[0.7; 6]);
        let up = upsample_bilinear(&map, 3).unwrap();
        assert_eq!(up.shape(), &[6, 9]);
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        let same = upsample_bilinear(&map, 1).unwrap();
        assert_eq!(same, map);
        assert!(upsample_bilinear(&map, 0).is_err());
    }

    #[test]
    fn upsample_monotone_columns() {
        let map = t32(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
        let up = upsample_bilinear(&map, 2).unwrap();
        for r in 0..4 {
            for c in 1..4 {
                assert!(up.get2(r, c) >= up.get2(r, c - 1));
            }
        }
        assert!(up.min_value() >= map.min_value());
        assert!(up.max_value() <= map.max_value());
    }

    #[test]
    fn finite_diff_low_orders_on_analytic_functions() {
        let x = Tensor::<f64>::new(vec![1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, DiffOrder::First, 1e-4);
        assert!((g.data()[0] - 6.0).abs() < 1e-4);

        let x = Tensor::<f64>::new(vec![1], vec![2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0].powi(3), &x, DiffOrder::Second, 1e-3);
        assert!((g.data()[0] - 12.0).abs() < 1e-2);

        let x = Tensor::<f64>::new(vec![1], vec![0.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0].tanh(), &x, DiffOrder::Third, 5e-2);
        assert!((g.data()[0] - (-2.0)).abs() < 1e-1);
    }

    #[test]
    fn finite_diff_matches_cubic_analytics_elementwise() {
        // p(x) = 1 - 2x + 0.5x^2 + 0.25x^3, f = sum p(x_i)
        let p1 = |x: f64| -2.0 + x + 0.75 * x * x;
        let p2 = |x: f64| 1.0 + 1.5 * x;
        let p3 = |_: f64| 1.5;
        let f = |t: &Tensor<f64>| {
            t.data()
                .iter()
                .map(|&x| 1.0 - 2.0 * x + 0.5 * x * x + 0.25 * x * x * x)
                .sum::<f64>()
        };
        let mut rng = Rng::new(21);
        let x: Tensor<f64> = rng.uniform_tensor([2, 3], -1.5, 1.5);
        for (order, deriv, tol) in [
            (DiffOrder::First, &p1 as &dyn Fn(f64) -> f64, 1e-6),
            (DiffOrder::Second, &p2, 1e-4),
            (DiffOrder::Third, &p3, 1e-2),
        ] {
            let g = finite_diff_grad(&f, &x, order, order.default_step());
            for (gi, xi) in g.data().iter().zip(x.data()) {
                let expect = deriv(*xi);
                let rel = (gi - expect).abs() / expect.abs().max(1e-9);
                assert!(rel <= tol, "{order:?}: got {gi}, expected {expect}");
            }
        }
    }

    #[test]
    fn linear_map_identity_zero_and_oracle() {
        let eye = t32(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = t32(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(linear_map(&eye, None, &x).unwrap(), x);

        let zero = Tensor::<f32>::zeros([2, 3]);
        assert!(linear_map(&zero, None, &x).unwrap().data().iter().all(|&v| v == 0.0));

        let mut rng = Rng::new(2);
        let w: Tensor<f32> = rng.uniform_tensor([2, 3], -1.0, 1.0);
        let xr: Tensor<f32> = rng.uniform_tensor([1, 3], -1.0, 1.0);
        let out = linear_map(&w, None, &xr).unwrap();
        for o in 0..2 {
            let mut acc = 0.0f64;
            for i in 0..3 {
                acc += w.get2(o, i) as f64 * xr.get2(0, i) as f64;
            }
            assert!((out.get2(0, o) as f64 - acc).abs() < 1e-6);
        }

        let bad = t32(&[2, 4], &[0.0; 8]);
        let err = linear_map(&bad, None, &x).unwrap_err().to_string();
        assert!(err.contains("shape mismatch"), "{err}");
    }
}
