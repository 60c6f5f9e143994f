//! Toy differentiable classification and box-regression heads.
//!
//! Both heads are linear scorers over the activation tensor followed by a
//! smooth squashing nonlinearity, so the same-element first/second/third
//! partials used by the gradient-weighting formula exist in closed form. The
//! classification head squashes through tanh rather than ReLU on purpose: the
//! weighting coefficients sum second- and third-order partials, and a
//! piecewise-linear head would zero them almost everywhere.

use crate::error::{Error, Result};
use crate::numerics::DiffOrder;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scalar confidence head: y = tanh(<weights, A> + bias).
#[derive(Clone, Debug)]
pub struct ClassHead<T> {
    weights: Tensor<T>,
    bias: T,
}

impl<T: Scalar> ClassHead<T> {
    pub fn new(weights: Tensor<T>, bias: T) -> Self {
        Self { weights, bias }
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    fn preactivation(&self, a: &Tensor<T>) -> Result<f64> {
        if self.weights.shape() != a.shape() {
            return Err(Error::shape("class_score", self.weights.shape(), a.shape()));
        }
        let mut acc = self.bias.as_f64();
        for (w, x) in self.weights.data().iter().zip(a.data()) {
            acc += w.as_f64() * x.as_f64();
        }
        Ok(acc)
    }

    /// Confidence score y = tanh(<w, A> + b), bounded in (-1, 1).
    pub fn score(&self, a: &Tensor<T>) -> Result<T> {
        Ok(T::of_f64(self.preactivation(a)?.tanh()))
    }

    /// Element-wise same-element partial d^order y / dA_e^order.
    ///
    /// With s = <w, A> + b and g = tanh this is g'(s) w, g''(s) w^2, or
    /// g'''(s) w^3; cross-element terms never appear because s is affine in
    /// each element.
    pub fn partials(&self, a: &Tensor<T>, order: DiffOrder) -> Result<Tensor<T>> {
        let s = self.preactivation(a)?;
        let t = s.tanh();
        let sech2 = 1.0 - t * t;
        let g = match order {
            DiffOrder::First => sech2,
            DiffOrder::Second => -2.0 * t * sech2,
            DiffOrder::Third => -2.0 * sech2 * (1.0 - 3.0 * t * t),
        };
        let data = self
            .weights
            .data()
            .iter()
            .map(|w| {
                let w = w.as_f64();
                let wp = match order {
                    DiffOrder::First => w,
                    DiffOrder::Second => w * w,
                    DiffOrder::Third => w * w * w,
                };
                T::of_f64(g * wp)
            })
            .collect();
        Ok(Tensor::assemble(a.shape().to_vec(), data))
    }
}

/// Ground-truth box in normalized (cx, cy, w, h) units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxTarget<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BoxTarget<T> {
    pub fn new(cx: T, cy: T, w: T, h: T) -> Result<Self> {
        let unit = T::zero()..=T::one();
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !unit.contains(&v) {
                return Err(Error::invalid(format!("box {name} = {v} outside [0, 1]")));
            }
        }
        if w <= T::zero() || h <= T::zero() {
            return Err(Error::invalid("box w and h must be positive"));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn coords(&self) -> [T; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// Huber loss: r^2/2 on |r| <= delta, delta(|r| - delta/2) beyond.
pub fn huber<T: Scalar>(r: T, delta: T) -> T {
    assert!(delta > T::zero(), "huber delta must be positive");
    let (r, d) = (r.as_f64(), delta.as_f64());
    T::of_f64(if r.abs() <= d {
        0.5 * r * r
    } else {
        d * (r.abs() - 0.5 * d)
    })
}

/// Huber gradient: the residual clipped to [-delta, delta].
pub fn huber_grad<T: Scalar>(r: T, delta: T) -> T {
    assert!(delta > T::zero(), "huber delta must be positive");
    let (r, d) = (r.as_f64(), delta.as_f64());
    T::of_f64(r.clamp(-d, d))
}

/// Four-coordinate regression head. Each coordinate i is predicted as
/// sigmoid(<weights_i, A> + bias_i), guaranteeing normalized box units, and
/// scored against the target by a Huber loss.
#[derive(Clone, Debug)]
pub struct BboxHead<T> {
    weights: Tensor<T>,
    bias: [T; 4],
    delta: T,
}

impl<T: Scalar> BboxHead<T> {
    pub fn new(weights: Tensor<T>, bias: [T; 4], delta: T) -> Result<Self> {
        let (coords, _, _, _) = weights.dims4("bbox_head")?;
        if coords != 4 {
            return Err(Error::shape("bbox_head", "(4, K, H, W)", weights.shape()));
        }
        if delta <= T::zero() {
            return Err(Error::invalid("huber delta must be positive"));
        }
        Ok(Self { weights, bias, delta })
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> [T; 4] {
        self.bias
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    fn check_activations(&self, a: &Tensor<T>) -> Result<usize> {
        let per_coord = &self.weights.shape()[1..];
        if per_coord != a.shape() {
            return Err(Error::shape("reg_loss", per_coord, a.shape()));
        }
        Ok(a.len())
    }

    fn preactivations(&self, a: &Tensor<T>) -> Result<[f64; 4]> {
        let n = self.check_activations(a)?;
        let mut s = [0.0f64; 4];
        for (i, si) in s.iter_mut().enumerate() {
            let mut acc = self.bias[i].as_f64();
            let w = &self.weights.data()[i * n..(i + 1) * n];
            for (wi, xi) in w.iter().zip(a.data()) {
                acc += wi.as_f64() * xi.as_f64();
            }
            *si = acc;
        }
        Ok(s)
    }

    /// Predicted (cx, cy, w, h) after sigmoid squashing.
    pub fn predict(&self, a: &Tensor<T>) -> Result<[T; 4]> {
        let s = self.preactivations(a)?;
        Ok(s.map(|v| T::of_f64(sigmoid(v))))
    }

    /// L_reg = sum_i huber(pred_i - target_i, delta).
    pub fn reg_loss(&self, a: &Tensor<T>, target: &BoxTarget<T>) -> Result<T> {
        let s = self.preactivations(a)?;
        let d = self.delta.as_f64();
        let mut loss = 0.0;
        for (si, ti) in s.iter().zip(target.coords()) {
            loss += huber(sigmoid(*si) - ti.as_f64(), d);
        }
        Ok(T::of_f64(loss))
    }

    /// Element-wise same-element partial d^order L_reg / dA_e^order,
    /// chain-ruled through the sigmoid and the active Huber branch.
    pub fn reg_partials(
        &self,
        a: &Tensor<T>,
        target: &BoxTarget<T>,
        order: DiffOrder,
    ) -> Result<Tensor<T>> {
        let s = self.preactivations(a)?;
        let n = a.len();
        let d = self.delta.as_f64();
        // Per-coordinate chain factors: with p = sigmoid(s), r = p - t, and
        // phi the Huber branch, d^kL/da^k = c_k * u^k for u the element weight.
        let mut c = [[0.0f64; 4]; 3];
        for i in 0..4 {
            let p = sigmoid(s[i]);
            let r = p - target.coords()[i].as_f64();
            let p1 = p * (1.0 - p);
            let p2 = p1 * (1.0 - 2.0 * p);
            let p3 = p1 * (1.0 - 6.0 * p + 6.0 * p * p);
            let (phi1, phi2) = if r.abs() <= d {
                (r, 1.0)
            } else {
                (d * r.signum(), 0.0)
            };
            c[0][i] = phi1 * p1;
            c[1][i] = phi2 * p1 * p1 + phi1 * p2;
            c[2][i] = 3.0 * phi2 * p1 * p2 + phi1 * p3;
        }
        let row = match order {
            DiffOrder::First => &c[0],
            DiffOrder::Second => &c[1],
            DiffOrder::Third => &c[2],
        };
        let mut out = vec![0.0f64; n];
        for i in 0..4 {
            let w = &self.weights.data()[i * n..(i + 1) * n];
            for (acc, wi) in out.iter_mut().zip(w) {
                let u = wi.as_f64();
                let up = match order {
                    DiffOrder::First => u,
                    DiffOrder::Second => u * u,
                    DiffOrder::Third => u * u * u,
                };
                *acc += row[i] * up;
            }
        }
        Ok(Tensor::assemble(
            a.shape().to_vec(),
            out.into_iter().map(T::of_f64).collect(),
        ))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::rng::Rng;

    fn random_class_head(rng: &mut Rng) -> (ClassHead<f64>, Tensor<f64>) {
        let w: Tensor<f64> = rng.uniform_tensor([2, 3, 3], -0.3, 0.3);
        let a: Tensor<f64> = rng.uniform_tensor([2, 3, 3], -1.0, 1.0);
        let bias = rng.uniform(-0.5, 0.5);
        (ClassHead::new(w, bias), a)
    }

    fn random_bbox_head(rng: &mut Rng) -> (BboxHead<f64>, Tensor<f64>, BoxTarget<f64>) {
        let w: Tensor<f64> = rng.uniform_tensor([4, 2, 3, 3], -0.3, 0.3);
        let a: Tensor<f64> = rng.uniform_tensor([2, 3, 3], -1.0, 1.0);
        let bias = [
            rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5),
        ];
        let head = BboxHead::new(w, bias, 1.0).unwrap();
        let target = BoxTarget::new(
            rng.uniform(0.2, 0.8),
            rng.uniform(0.2, 0.8),
            rng.uniform(0.1, 0.4),
            rng.uniform(0.1, 0.4),
        )
        .unwrap();
        (head, a, target)
    }

    #[test]
    fn class_score_basics() {
        let zero = ClassHead::new(Tensor::<f64>::zeros([1, 2, 2]), 0.0);
        let a = Tensor::<f64>::full([1, 2, 2], 3.0);
        assert_eq!(zero.score(&a).unwrap(), 0.0);

        let biased = ClassHead::new(Tensor::<f64>::zeros([1, 2, 2]), 0.7);
        assert!((biased.score(&a).unwrap() - 0.7f64.tanh()).abs() < 1e-15);

        let mut rng = Rng::new(1);
        let (head, a) = random_class_head(&mut rng);
        let mut acc = head.bias();
        for (w, x) in head.weights().data().iter().zip(a.data()) {
            acc += w * x;
        }
        assert!((head.score(&a).unwrap() - acc.tanh()).abs() < 1e-6);
        assert!(head.score(&a).unwrap().abs() < 1.0);

        let bad = Tensor::<f64>::zeros([1, 2, 3]);
        assert!(head.score(&bad).is_err());
    }

    #[test]
    fn class_partials_at_zero_preactivation() {
        let w = Tensor::<f64>::full([1, 2, 2], 0.5);
        let head = ClassHead::new(w, 0.0);
        let a = Tensor::<f64>::zeros([1, 2, 2]);
        let g1 = head.partials(&a, DiffOrder::First).unwrap();
        assert!(g1.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let g2 = head.partials(&a, DiffOrder::Second).unwrap();
        assert!(g2.data().iter().all(|&v| v == 0.0));
        let g3 = head.partials(&a, DiffOrder::Third).unwrap();
        assert!(g3.data().iter().all(|&v| (v - (-0.25)).abs() < 1e-15));
    }

    #[test]
    fn class_partials_match_finite_differences() {
        let mut rng = Rng::new(42);
        for _ in 0..100 {
            let (head, a) = random_class_head(&mut rng);
            for (order, tol) in [
                (DiffOrder::First, 1e-4),
                (DiffOrder::Second, 1e-3),
                (DiffOrder::Third, 5e-2),
            ] {
                let analytic = head.partials(&a, order).unwrap();
                let numeric = finite_diff_grad(
                    |t| head.score(t).unwrap(),
                    &a,
                    order,
                    order.default_step(),
                );
                for (an, nu) in analytic.data().iter().zip(numeric.data()) {
                    if an.abs() > 1e-3 {
                        let rel = (an - nu).abs() / an.abs();
                        assert!(rel <= tol, "{order:?}: analytic {an}, numeric {nu}");
                    }
                }
            }
        }
    }

    #[test]
    fn huber_branches_and_knot_continuity() {
        assert!((huber(0.5f64, 1.0) - 0.125).abs() < 1e-15);
        assert!((huber_grad(0.5f64, 1.0) - 0.5).abs() < 1e-15);
        assert!((huber(2.0f64, 1.0) - 1.5).abs() < 1e-15);
        assert!((huber_grad(2.0f64, 1.0) - 1.0).abs() < 1e-15);
        assert!((huber_grad(-2.0f64, 1.0) + 1.0).abs() < 1e-15);
        for delta in [0.5f64, 1.0, 2.0] {
            let quad = 0.5 * delta * delta;
            let lin = delta * (delta - 0.5 * delta);
            assert!((quad - lin).abs() <= 1e-7);
            assert!((huber_grad(delta, delta) - delta).abs() <= 1e-7);
            assert!((huber(delta, delta) - quad).abs() <= 1e-7);
        }
    }

    #[test]
    fn reg_loss_zero_iff_exact_prediction() {
        // Zero weights and zero bias predict sigmoid(0) = 0.5 on every
        // coordinate; a (0.5, 0.5, 0.5, 0.5) target gives zero residuals.
        let head = BboxHead::new(Tensor::<f64>::zeros([4, 1, 2, 2]), [0.0; 4], 1.0).unwrap();
        let a = Tensor::<f64>::zeros([1, 2, 2]);
        let target = BoxTarget::new(0.5, 0.5, 0.5, 0.5).unwrap();
        assert_eq!(head.reg_loss(&a, &target).unwrap(), 0.0);

        let off = BoxTarget::new(0.5, 0.5, 0.5, 0.25).unwrap();
        let loss = head.reg_loss(&a, &off).unwrap();
        assert!((loss - 0.5 * 0.25 * 0.25).abs() < 1e-12);
        assert!(loss > 0.0);

        // single coordinate with residual 0.5, quadratic branch: 0.125
        let half_off = BoxTarget::new(0.5, 0.5, 0.5, 1.0).unwrap();
        assert!((head.reg_loss(&a, &half_off).unwrap() - 0.125).abs() < 1e-12);

        let mut rng = Rng::new(8);
        let (head, a, target) = random_bbox_head(&mut rng);
        let preds = head.predict(&a).unwrap();
        let mut expect = 0.0;
        for (p, t) in preds.iter().zip(target.coords()) {
            expect += huber(p - t, 1.0);
        }
        assert!((head.reg_loss(&a, &target).unwrap() - expect).abs() < 1e-12);
        assert!(head.reg_loss(&a, &target).unwrap() >= 0.0);
    }

    #[test]
    fn reg_partials_zero_with_zero_weights() {
        let head = BboxHead::new(Tensor::<f64>::zeros([4, 1, 2, 2]), [0.0; 4], 1.0).unwrap();
        let a = Tensor::<f64>::zeros([1, 2, 2]);
        let target = BoxTarget::new(0.5, 0.5, 0.5, 0.5).unwrap();
        for order in [DiffOrder::First, DiffOrder::Second, DiffOrder::Third] {
            let g = head.reg_partials(&a, &target, order).unwrap();
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reg_partials_match_finite_differences() {
        let mut rng = Rng::new(99);
        for _ in 0..100 {
            let (head, a, target) = random_bbox_head(&mut rng);
            for (order, tol) in [
                (DiffOrder::First, 1e-3),
                (DiffOrder::Second, 1e-3),
                (DiffOrder::Third, 5e-2),
            ] {
                let analytic = head.reg_partials(&a, &target, order).unwrap();
                let numeric = finite_diff_grad(
                    |t| head.reg_loss(t, &target).unwrap(),
                    &a,
                    order,
                    order.default_step(),
                );
                for (an, nu) in analytic.data().iter().zip(numeric.data()) {
                    if an.abs() > 1e-3 {
                        let rel = (an - nu).abs() / an.abs();
                        assert!(rel <= tol, "{order:?}: analytic {an}, numeric {nu}");
                    }
                }
            }
        }
    }
}
