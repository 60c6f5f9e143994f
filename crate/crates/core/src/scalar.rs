use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for all tensors: f32 or f64.
///
/// Every accumulation (dot products, reductions, trig-heavy formulas) runs in
/// f64 internally regardless of the storage type, so f32 and f64 tensors see
/// the same rounding behaviour at the reduction level.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> scalar conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar -> f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
