//! Scalar abstraction shared by every numeric module.

use nalgebra as na;
use num_traits as nt;

/// Real scalar usable by the camera, attention, diffusion and metric code.
///
/// Implemented for `f32` and `f64`. Math goes through nalgebra's
/// [`RealField`](na::RealField); `FromPrimitive` is used for literals.
pub trait Real: na::RealField + na::Scalar + Copy + nt::FloatConst + nt::FromPrimitive + nt::ToPrimitive {
    /// Tolerance for orthonormality and unit-norm checks on construction.
    const VALIDATION_TOL: f64;
    /// Rotations off by less than this are re-orthonormalized when repair is requested.
    const REPAIR_TOL: f64;

    #[inline]
    fn lit(v: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(v: usize) -> Self {
        <Self as nt::FromPrimitive>::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as nt::ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn as_f32(self) -> f32 {
        <Self as nt::ToPrimitive>::to_f32(&self).unwrap_or(f32::NAN)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Real for f64 {
    const VALIDATION_TOL: f64 = 1e-9;
    const REPAIR_TOL: f64 = 1e-6;
}

// f32 cannot resolve 1e-9; a few ulps around unity is the best it can do.
impl Real for f32 {
    const VALIDATION_TOL: f64 = 1e-5;
    const REPAIR_TOL: f64 = 1e-4;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert_eq!(<f64 as Real>::from_count(7).as_f64(), 7.0);
        assert!(!<f64 as Real>::lit(f64::INFINITY).is_finite_value());
    }
}
