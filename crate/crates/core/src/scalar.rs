//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! Models, samplers and oracles are generic over [`Real`], implemented for
//! `f32` and `f64`. Dense eigen-solves and linear solves are carried out in
//! `f64` whatever the storage type.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for probabilities, potentials and bounds.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + nalgebra::Scalar
    + 'static
{
    /// Converts an `f64` literal, panicking only on non-representable NaN casts.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A validation tolerance: `base`, widened to the precision of the type.
    fn tol(base: f64) -> Self {
        let eps = Self::epsilon().to_f64_lossy();
        Self::of(base.max(64.0 * eps))
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_widens_for_single_precision() {
        assert_eq!(f64::tol(1e-10), 1e-10);
        assert!(f32::tol(1e-10) > 1e-6);
    }
}
