//! Seed-derived random stream (splitmix64).
//!
//! Hand-rolled rather than pulled from a crate because the artifact's
//! reproducibility contract is byte-level: the same seed must produce the
//! same files on every platform and toolchain, including the pipeline
//! manifest hashes.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derives an independent stream for a named pipeline stage, so adding or
    /// reconfiguring one stage never shifts the draws of another.
    pub fn for_stage(seed: u64, stage: &str) -> Self {
        // FNV-1a over the stage name, folded into the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stage.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self::new(seed ^ h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn uniform_scalar<T: Scalar>(&mut self, lo: f64, hi: f64) -> T {
        T::of_f64(self.uniform(lo, hi))
    }

    pub fn uniform_tensor<T: Scalar>(
        &mut self,
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
    ) -> Tensor<T> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.uniform_scalar(lo, hi)).collect();
        Tensor::assemble(shape, data)
    }
}
