//! Finite-sample quantities: mixing constants, small-ball constants, sample-size
//! requirements and the LSTD error predictor.
//!
//! Absolute constants hidden by big-O statements are explicit parameters
//! (default 1) and are echoed in every [`BoundReport`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lqr::{closed_loop, stationary_covariance, LinearPolicy, LqrInstance};
use crate::lyapunov::{default_rate, hinf_resolvent_norm, DEFAULT_HINF_GRID};
use crate::matops::{max_eig_sym, min_eig_sym, spectral_radius};
use crate::{Error, Real, Result};

/// Small-ball probability lower bound for LQR features.
pub const LQR_SMALL_BALL_Q: f64 = 1.0 / 324.0;
/// Required-N searches give up above this length.
pub const MAX_REQUIRED_N: u64 = 1_000_000_000_000;

/// `beta(k) <= coefficient * rate^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingBound<T: Real> {
    /// Already includes the factor 1/2, i.e. `gamma_tilde / 2`.
    pub coefficient: T,
    /// Resolvent norm of `L / rate` on the unit circle (grid estimate).
    pub hinf: T,
    pub rate: T,
    pub n: usize,
}

impl<T: Real> MixingBound<T> {
    /// `hinf * sqrt(Tr(P_inf) + n / (1 - rate^2))`, the constant without the 1/2.
    pub fn gamma_tilde(&self) -> T {
        self.coefficient * T::lit(2.0)
    }

    pub fn beta(&self, k: u32) -> T {
        self.coefficient * self.rate.powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallBall<T: Real> {
    pub tau: T,
    pub q: T,
}

pub fn beta_mixing_bound<T: Real>(l: &DMatrix<T>, rho: T, grid: usize) -> Result<MixingBound<T>> {
    let radius = spectral_radius(l);
    if rho <= radius || rho >= T::one() {
        return Err(Error::RateTooSmall { rate: rho.to_f64_lossy(), radius: radius.to_f64_lossy() });
    }
    let hinf = hinf_resolvent_norm(l, rho, grid)?;
    let p_inf = stationary_covariance(l)?;
    let n = l.nrows();
    let inner = p_inf.trace() + T::lit(n as f64) / (T::one() - rho * rho);
    Ok(MixingBound { coefficient: hinf * inner.sqrt() / T::lit(2.0), hinf, rate: rho, n })
}

pub fn small_ball_lqr<T: Real>(p_inf: &DMatrix<T>) -> Result<SmallBall<T>> {
    let tau = min_eig_sym(p_inf)?;
    if tau <= T::zero() {
        return Err(Error::NotPD);
    }
    Ok(SmallBall { tau, q: T::lit(LQR_SMALL_BALL_Q) })
}

/// `E ||phi(X)||^2 = 2 ||P||_F^2 + Tr(P)^2 + 2 eta Tr(P) + eta^2 n` for `X ~ N(0, P)`.
pub fn feature_second_moment<T: Real>(p_inf: &DMatrix<T>, eta: T, n: usize) -> T {
    let tr = p_inf.trace();
    let two = T::lit(2.0);
    two * p_inf.norm_squared() + tr * tr + two * eta * tr + eta * eta * T::lit(n as f64)
}

/// `||P||_2 / lambda_min(P)`.
pub fn condition_number<T: Real>(p_inf: &DMatrix<T>) -> Result<T> {
    let lo = min_eig_sym(p_inf)?;
    if lo <= T::zero() {
        return Err(Error::NotPD);
    }
    Ok(max_eig_sym(p_inf)? / lo)
}

/// Smallest `N >= 1` with `holds(N)`, assuming `holds` is eventually true and
/// monotone past its first crossing. The result satisfies `holds(N)` and, when
/// `N > 1`, not `holds(N - 1)`.
pub fn smallest_satisfying(holds: impl Fn(u64) -> bool) -> Result<u64> {
    if holds(1) {
        return Ok(1);
    }
    let mut hi = 2u64;
    while !holds(hi) {
        if hi >= MAX_REQUIRED_N {
            return Err(Error::NoSolution(MAX_REQUIRED_N));
        }
        hi = (hi * 2).min(MAX_REQUIRED_N);
    }
    // invariant: !holds(lo), holds(hi)
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn check_mixing(rate: f64, coefficient: f64, delta: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidParameter(format!("mixing rate {rate} outside (0, 1)")));
    }
    if !(coefficient > 0.0 && coefficient.is_finite()) {
        return Err(Error::InvalidParameter(format!("mixing coefficient {coefficient} must be positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence {delta} outside (0, 1)")));
    }
    Ok(())
}

/// Block count `max(1, log(2 G N / delta) / (1 - rho))`.
fn block_factor(n: u64, coefficient: f64, rate: f64, delta: f64) -> f64 {
    ((2.0 * coefficient * n as f64 / delta).ln() / (1.0 - rate)).max(1.0)
}

/// Right-hand side of the small-ball sample requirement at length `n`.
pub fn small_ball_requirement_rhs(n: u64, sb: &SmallBall<f64>, second_moment: f64, mixing: &MixingBound<f64>, delta: f64) -> f64 {
    let a = block_factor(n, mixing.coefficient, mixing.rate, delta);
    let q2 = sb.q * sb.q;
    let first = 1024.0 * second_moment / (sb.tau * sb.tau * q2);
    let second = 32.0 / q2 * (4.0 * a / delta).ln();
    a * (first.max(second) + 1.0)
}

/// Smallest `N` with
/// `N >= a(N) (max{1024 E|X|^2 / (tau^2 q^2), (32/q^2) log(4 a(N) / delta)} + 1)`,
/// where `a(N) = max(1, log(2 G N / delta) / (1 - rho))` and `G` is the mixing coefficient.
pub fn required_trajectory_length<T: Real>(
    sb: &SmallBall<T>,
    second_moment: T,
    mixing: &MixingBound<T>,
    delta: T,
) -> Result<u64> {
    let sb = SmallBall { tau: sb.tau.to_f64_lossy(), q: sb.q.to_f64_lossy() };
    let mixing = to_f64_mixing(mixing);
    let (second_moment, delta) = (second_moment.to_f64_lossy(), delta.to_f64_lossy());
    check_mixing(mixing.rate, mixing.coefficient, delta)?;
    if !(sb.tau > 0.0 && sb.q > 0.0 && sb.q <= 1.0) {
        return Err(Error::InvalidParameter("small-ball pair needs tau > 0 and q in (0, 1]".into()));
    }
    smallest_satisfying(|n| n as f64 >= small_ball_requirement_rhs(n, &sb, second_moment, &mixing, delta))
}

/// Requirement under a moment-contractivity assumption together with the eigenvalue floor it buys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractiveRequirement {
    pub n: u64,
    /// `ell / (128 B^4)`.
    pub eigenvalue_floor: f64,
}

pub fn contractive_requirement_rhs(n: u64, ell: f64, l_upper: f64, b_ratio: f64, dim: usize, mixing: &MixingBound<f64>, delta: f64) -> f64 {
    let a = block_factor(n, mixing.coefficient, mixing.rate, delta);
    let first = 65536.0 * b_ratio.powi(6) * (l_upper / ell) * dim as f64;
    let second = 512.0 * b_ratio.powi(4) * (4.0 * a / delta).ln();
    a * (first.max(second) + 1.0)
}

/// Smallest `N` with
/// `N >= a(N) (max{65536 B^6 (L/ell) n, 512 B^4 log(4 a(N) / delta)} + 1)`.
pub fn required_trajectory_length_contractive<T: Real>(
    ell: T,
    l_upper: T,
    b_ratio: T,
    dim: usize,
    mixing: &MixingBound<T>,
    delta: T,
) -> Result<ContractiveRequirement> {
    let (ell, l_upper, b_ratio, delta) = (ell.to_f64_lossy(), l_upper.to_f64_lossy(), b_ratio.to_f64_lossy(), delta.to_f64_lossy());
    let mixing = to_f64_mixing(mixing);
    check_mixing(mixing.rate, mixing.coefficient, delta)?;
    if !(ell > 0.0 && ell <= l_upper && b_ratio >= 1.0) {
        return Err(Error::InvalidParameter("need 0 < ell <= L and B >= 1".into()));
    }
    let n = smallest_satisfying(|n| n as f64 >= contractive_requirement_rhs(n, ell, l_upper, b_ratio, dim, &mixing, delta))?;
    Ok(ContractiveRequirement { n, eigenvalue_floor: ell / (128.0 * b_ratio.powi(4)) })
}

/// `C max{Tr(P)^2, eta^2 n} / ((1 - rho) lambda_min(P)^2)`.
pub fn lstd_requirement_target(p_inf: &DMatrix<f64>, eta: f64, rate: f64, constant: f64) -> Result<f64> {
    let n = p_inf.nrows() as f64;
    let lo = min_eig_sym(p_inf)?;
    if lo <= 0.0 {
        return Err(Error::NotPD);
    }
    let tr = p_inf.trace();
    Ok(constant * (tr * tr).max(eta * eta * n) / ((1.0 - rate) * lo * lo))
}

/// `N / (l(N) log l(N))` with `l(N) = max(e, log(G N / delta))`.
pub fn lstd_requirement_lhs(n: u64, gamma_tilde: f64, delta: f64) -> f64 {
    let l = (gamma_tilde * n as f64 / delta).ln().max(std::f64::consts::E);
    n as f64 / (l * l.ln())
}

/// Smallest `N` with `N / (log(G N/delta) loglog(G N/delta)) >= C max{Tr(P)^2, eta^2 n} / ((1 - rho) lambda_min(P)^2)`,
/// `G` being `gamma_tilde`.
pub fn lstd_requirement_lqr<T: Real>(
    p_inf: &DMatrix<T>,
    eta: T,
    mixing: &MixingBound<T>,
    delta: T,
    constant: T,
) -> Result<u64> {
    let p = p_inf.map(|v| v.to_f64_lossy());
    let mixing = to_f64_mixing(mixing);
    let delta = delta.to_f64_lossy();
    check_mixing(mixing.rate, mixing.coefficient, delta)?;
    let target = lstd_requirement_target(&p, eta.to_f64_lossy(), mixing.rate, constant.to_f64_lossy())?;
    let g = mixing.gamma_tilde();
    smallest_satisfying(|n| lstd_requirement_lhs(n, g, delta) >= target)
}

/// Order-of-magnitude relative error predictor
/// `C eta sqrt(||P||) max{Tr(P), eta sqrt(n)} / (sqrt(N) lambda_min(P)^2)` with polylog factors set to 1.
pub fn lstd_error_prediction<T: Real>(p_inf: &DMatrix<T>, eta: T, samples: u64, constant: T) -> Result<T> {
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let lo = min_eig_sym(p_inf)?;
    if lo <= T::zero() {
        return Err(Error::NotPD);
    }
    let n = T::lit(p_inf.nrows() as f64);
    let top = max_eig_sym(p_inf)?;
    let spread = p_inf.trace().max(eta * n.sqrt());
    Ok(constant * eta * top.sqrt() * spread / (T::lit(samples as f64).sqrt() * lo * lo))
}

fn to_f64_mixing<T: Real>(m: &MixingBound<T>) -> MixingBound<f64> {
    MixingBound {
        coefficient: m.coefficient.to_f64_lossy(),
        hinf: m.hinf.to_f64_lossy(),
        rate: m.rate.to_f64_lossy(),
        n: m.n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Multiplies the LSTD sample requirement.
    pub requirement: f64,
    /// Multiplies the error prediction.
    pub prediction: f64,
    /// Fixed to 1; polylogarithmic factors are dropped.
    pub polylog: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { requirement: 1.0, prediction: 1.0, polylog: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPrediction {
    pub samples: u64,
    pub predicted_rel_error: f64,
}

/// Theory quantities for one closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mixing: MixingBound<f64>,
    pub gamma_tilde: f64,
    pub smallball: SmallBall<f64>,
    pub second_moment: f64,
    pub kappa: f64,
    pub lambda_min: f64,
    pub trace_p_inf: f64,
    pub eta: f64,
    pub delta: f64,
    pub required_n: u64,
    /// Prediction at `required_n`.
    pub predicted_rel_error: f64,
    pub predictions: Vec<ErrorPrediction>,
    pub small_ball_required_n: Option<u64>,
    pub hinf_grid: usize,
    pub constants: BoundConstants,
    pub notes: Vec<String>,
}

pub fn bound_report(
    inst: &LqrInstance<f64>,
    pol: &LinearPolicy<f64>,
    delta: f64,
    sample_sizes: &[u64],
    constants: BoundConstants,
) -> Result<BoundReport> {
    let l = closed_loop(inst, pol)?;
    let eta = inst.eta();
    if !eta.is_finite() {
        return Err(Error::InvalidParameter("bounds need gamma < 1".into()));
    }
    // stability of sqrt(gamma) L is what the value function needs; the mixing analysis needs L itself
    let rate = default_rate(&l);
    let mixing = beta_mixing_bound(&l, rate, DEFAULT_HINF_GRID)?;
    let p_inf = stationary_covariance(&l)?;
    let smallball = small_ball_lqr(&p_inf)?;
    let n = inst.state_dim();
    let second_moment = feature_second_moment(&p_inf, eta, n);
    let required_n = lstd_requirement_lqr(&p_inf, eta, &mixing, delta, constants.requirement)?;
    let small_ball_required_n = required_trajectory_length(&smallball, second_moment, &mixing, delta).ok();
    let predictions = sample_sizes
        .iter()
        .map(|&s| {
            Ok(ErrorPrediction {
                samples: s,
                predicted_rel_error: lstd_error_prediction(&p_inf, eta, s, constants.prediction)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        gamma_tilde: mixing.gamma_tilde(),
        mixing,
        smallball,
        second_moment,
        kappa: condition_number(&p_inf)?,
        lambda_min: smallball.tau,
        trace_p_inf: p_inf.trace(),
        eta,
        delta,
        required_n,
        predicted_rel_error: lstd_error_prediction(&p_inf, eta, required_n, constants.prediction)?,
        predictions,
        small_ball_required_n,
        hinf_grid: DEFAULT_HINF_GRID,
        constants,
        notes: vec![
            "mixing.coefficient: beta(k) <= (hinf/2) sqrt(Tr(P_inf) + n/(1-rate^2)) rate^k, rate = (1 + spectral radius of L)/2, hinf from a uniform frequency grid (a lower estimate)".into(),
            "gamma_tilde = 2 * mixing.coefficient".into(),
            "smallball: tau = lambda_min(P_inf), q = 1/324".into(),
            "second_moment: 2||P_inf||_F^2 + Tr(P_inf)^2 + 2 eta Tr(P_inf) + eta^2 n".into(),
            "required_n: smallest N with N / (l log l) >= C max{Tr(P_inf)^2, eta^2 n} / ((1-rate) lambda_min^2), l = max(e, log(gamma_tilde N / delta)), C = constants.requirement".into(),
            "predicted_rel_error: C eta sqrt(||P_inf||) max{Tr(P_inf), eta sqrt(n)} / (sqrt(N) lambda_min^2), polylog = 1, C = constants.prediction; order of magnitude only".into(),
            "small_ball_required_n: small-ball covariance requirement with E|X|^2 replaced by the feature second moment, block factor a(N) clamped below at 1".into(),
        ],
    })
}
