use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical code is generic over.
///
/// Tolerances that depend on the working precision live here so that `f32`
/// builds do not inherit thresholds below their machine epsilon.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Relative Frobenius asymmetry accepted before a matrix is rejected.
    const SYM_TOL: f64;
    /// Relative singular-value cutoff for pseudo-inverse solves.
    const RANK_TOL: f64;
    /// Relative change at which fixed-point iterations stop.
    const ITER_TOL: f64;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }
}

impl Real for f64 {
    const SYM_TOL: f64 = 1e-10;
    const RANK_TOL: f64 = 1e-10;
    const ITER_TOL: f64 = 1e-12;
}

impl Real for f32 {
    const SYM_TOL: f64 = 1e-5;
    const RANK_TOL: f64 = 1e-5;
    const ITER_TOL: f64 = 1e-6;
}
