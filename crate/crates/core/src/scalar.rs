use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of an embedding vector.
///
/// Implemented for `f32` and `f64`. Every reduction in this crate converts
/// elements to `f64` before accumulating, so the choice only affects storage.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static {
    #[inline]
    fn widen(self) -> f64 {
        // Infallible for f32/f64.
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
}
