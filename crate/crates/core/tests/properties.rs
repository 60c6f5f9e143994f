//! Property tests for the invariants that must hold on arbitrary inputs.

use hmpe_core::heads::{huber, huber_grad};
use hmpe_core::heatmap::{mix_heatmaps, normalize_heatmap};
use hmpe_core::lsconv::fuse_paths;
use hmpe_core::mask_pe::mask_from_heatmap;
use hmpe_core::numerics::{bilinear_sample, relu, softmax_rows};
use hmpe_core::tensor::Tensor;
use proptest::prelude::*;

fn finite_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relu_is_idempotent(data in finite_vec(12, -10.0, 10.0)) {
        let t = Tensor::new(vec![3, 4], data).unwrap();
        let once = relu(&t);
        let twice = relu(&once);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn softmax_rows_are_distributions(data in finite_vec(12, -1e4, 1e4)) {
        let t = Tensor::new(vec![3, 4], data).unwrap();
        let s = softmax_rows(&t).unwrap();
        for r in 0..3 {
            let sum: f64 = (0..4).map(|c| s.get2(r, c)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!((0..4).all(|c| s.get2(r, c) >= 0.0));
        }
    }

    #[test]
    fn bilinear_stays_within_map_range(
        data in finite_vec(16, -5.0, 5.0),
        x in -2.0..6.0f64,
        y in -2.0..6.0f64,
    ) {
        let map = Tensor::new(vec![4, 4], data).unwrap();
        let v = bilinear_sample(&map, x, y);
        prop_assert!(v >= map.min_value() - 1e-9);
        prop_assert!(v <= map.max_value() + 1e-9);
    }

    #[test]
    fn huber_is_nonnegative_and_c1(r in -5.0..5.0f64, delta in 0.05..3.0f64) {
        prop_assert!(huber(r, delta) >= 0.0);
        // gradient is the clipped residual and matches the loss slope sign
        let g = huber_grad(r, delta);
        prop_assert!(g.abs() <= delta + 1e-12);
        prop_assert!(g.signum() == r.signum() || r == 0.0);
    }

    #[test]
    fn mixed_heatmap_is_elementwise_bounded(
        hc in finite_vec(9, 0.0, 4.0),
        hb in finite_vec(9, 0.0, 4.0),
        lambda in 0.0..1.0f64,
    ) {
        let hc = Tensor::new(vec![3, 3], hc).unwrap();
        let hb = Tensor::new(vec![3, 3], hb).unwrap();
        let m = mix_heatmaps(&hc, &hb, lambda).unwrap();
        for ((v, c), b) in m.data().iter().zip(hc.data()).zip(hb.data()) {
            prop_assert!(*v >= c.min(*b) - 1e-9 && *v <= c.max(*b) + 1e-9);
        }
    }

    #[test]
    fn fused_paths_are_elementwise_bounded(
        s in finite_vec(9, -3.0, 3.0),
        l in finite_vec(9, -3.0, 3.0),
        w in 0.0..1.0f64,
    ) {
        let s = Tensor::new(vec![3, 3], s).unwrap();
        let l = Tensor::new(vec![3, 3], l).unwrap();
        let f = fuse_paths(&s, &l, w).unwrap();
        for ((v, a), b) in f.data().iter().zip(s.data()).zip(l.data()) {
            prop_assert!(*v >= a.min(*b) - 1e-9 && *v <= a.max(*b) + 1e-9);
        }
    }

    #[test]
    fn hot_cells_shrink_with_tau(data in finite_vec(16, -2.0, 2.0), t1 in 0.0..0.9f64, t2 in 0.0..0.9f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let h = normalize_heatmap(&Tensor::new(vec![4, 4], data).unwrap());
        let wide = mask_from_heatmap(&h, lo).unwrap();
        let narrow = mask_from_heatmap(&h, hi).unwrap();
        for (w, n) in wide.mask().data().iter().zip(narrow.mask().data()) {
            prop_assert!(w >= n, "hot cell appeared as tau grew");
        }
    }
}
