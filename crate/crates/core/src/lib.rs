//! Least-squares temporal-difference learning for the linear quadratic regulator.
//!
//! The crate covers the exact LQR quantities (Lyapunov and Riccati solves,
//! value and Q-function matrices, discounted and average costs), seeded
//! trajectory generation, the model-free estimators LSTD, LSTD-Q and LSPI, the
//! model-based nominal controller, the finite-sample bound calculators, and
//! an experiment harness with CSV/JSON reporting.
//!
//! All numerical code is generic over a [`Real`] scalar (`f32` or `f64`).
//! The aliases at the crate root fix the scalar to `f64`, which is what the
//! experiment harness uses.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod lqr;
pub mod lyapunov;
pub mod matops;
pub mod report;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense matrix over the default scalar.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense vector over the default scalar.
pub type Vector = nalgebra::DVector<f64>;

pub type SymVec = matops::SymVec<f64>;
pub type LqrInstance = lqr::LqrInstance<f64>;
pub type LinearPolicy = lqr::LinearPolicy<f64>;
pub type QuadraticValue = lqr::QuadraticValue<f64>;
pub type Transition = simulate::Transition<f64>;
pub type Trajectory = simulate::Trajectory<f64>;
pub type DecayCertificate = lyapunov::DecayCertificate<f64>;
pub type DareSolution = lyapunov::DareSolution<f64>;
pub type LstdEstimate = estimators::LstdEstimate<f64>;
pub type LspiOutcome = estimators::LspiOutcome<f64>;
pub type SysId = estimators::SysId<f64>;
