//! Discrete Lyapunov and Riccati solvers and the resolvent decay certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::matops::{identity, spectral_norm, spectral_radius, symmetrize};
use crate::{Error, Real, Result};

/// Largest dimension solved through the Kronecker-vectorized linear system.
pub const KRONECKER_MAX_DIM: usize = 40;
/// Default number of unit-circle points in the H-infinity grid.
pub const DEFAULT_HINF_GRID: usize = 4096;
/// Powers checked when certifying `||A^k|| <= gamma rho^k`.
pub const DECAY_CHECK_POWERS: usize = 50;
/// Cap on Riccati value-iteration steps.
pub const DARE_MAX_ITER: usize = 100_000;

const LYAP_STABILITY_MARGIN: f64 = 1e-12;

/// Which side the dynamics act on in a discrete Lyapunov equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovForm {
    /// `L P L^T - P + S = 0` (state covariance).
    Direct,
    /// `L^T P L - P + S = 0` (value / cost-to-go).
    Transposed,
}

/// Solves the discrete Lyapunov equation selected by `form`.
///
/// Dimensions up to [`KRONECKER_MAX_DIM`] use the vectorized system
/// `(I - L (x) L) vec(P) = vec(S)`; larger ones use the doubling iteration.
pub fn solve_dlyap<T: Real>(l: &DMatrix<T>, s: &DMatrix<T>, form: LyapunovForm) -> Result<DMatrix<T>> {
    let n = l.nrows();
    if !l.is_square() || s.shape() != (n, n) {
        return Err(Error::DimMismatch(format!(
            "lyapunov: L is {}x{}, S is {}x{}",
            l.nrows(),
            l.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let radius = spectral_radius(l);
    if radius >= T::one() - T::lit(LYAP_STABILITY_MARGIN) || !radius.is_finite() {
        return Err(Error::Unstable(radius.to_f64_lossy()));
    }
    let dyn_mat = match form {
        LyapunovForm::Direct => l.clone(),
        LyapunovForm::Transposed => l.transpose(),
    };
    let p = if n <= KRONECKER_MAX_DIM {
        kronecker_solve(&dyn_mat, s)?
    } else {
        doubling_solve(&dyn_mat, s)
    };
    Ok(symmetrize(&p))
}

fn kronecker_solve<T: Real>(l: &DMatrix<T>, s: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = l.nrows();
    let system = identity::<T>(n * n) - l.kronecker(l);
    let rhs = nalgebra::DVector::from_column_slice(s.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unstable(spectral_radius(l).to_f64_lossy()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

fn doubling_solve<T: Real>(l: &DMatrix<T>, s: &DMatrix<T>) -> DMatrix<T> {
    let tol = T::lit(T::ITER_TOL) * T::lit(1e-3);
    let mut p = s.clone();
    let mut power = l.clone();
    for _ in 0..200 {
        let step = &power * &p * power.transpose();
        p += &step;
        power = &power * &power;
        if step.norm() <= tol * p.norm() {
            break;
        }
    }
    p
}

/// `P_k = sum_{t<k} L^t (L^t)^T`, the covariance of `X_k` started from zero.
pub fn finite_gramian<T: Real>(l: &DMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    if !l.is_square() {
        return Err(Error::DimMismatch("finite gramian needs a square matrix".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("gramian horizon must be at least 1".into()));
    }
    let n = l.nrows();
    let mut acc = DMatrix::zeros(n, n);
    let mut power = identity::<T>(n);
    for _ in 0..k {
        acc += &power * power.transpose();
        power = l * power;
    }
    Ok(symmetrize(&acc))
}

/// Grid approximation of `sup_{|z|=1} ||(z I - A / rho)^{-1}||`.
///
/// Evaluated at `grid` equally spaced angles starting at zero, so a grid that
/// is a multiple of another never yields a smaller value.
pub fn hinf_resolvent_norm<T: Real>(a: &DMatrix<T>, rho: T, grid: usize) -> Result<T> {
    if !a.is_square() {
        return Err(Error::DimMismatch("resolvent needs a square matrix".into()));
    }
    if grid == 0 {
        return Err(Error::InvalidParameter("grid must be positive".into()));
    }
    let radius = spectral_radius(a);
    if rho <= radius {
        return Err(Error::RateTooSmall {
            rate: rho.to_f64_lossy(),
            radius: radius.to_f64_lossy(),
        });
    }
    let n = a.nrows();
    let scaled = a / rho;
    // sigma_max((zI - M)^{-1}) = 1 / sigma_min(zI - M), and the singular values of
    // X + iY are those of the real embedding [[X, -Y], [Y, X]] (each doubled).
    let mut best = T::zero();
    for j in 0..grid {
        let theta = T::two_pi() * T::lit(j as f64) / T::lit(grid as f64);
        let (sin, cos) = (theta.sin(), theta.cos());
        let mut embed = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                let x = if r == c { cos - scaled[(r, c)] } else { -scaled[(r, c)] };
                let y = if r == c { sin } else { T::zero() };
                embed[(r, c)] = x;
                embed[(r + n, c + n)] = x;
                embed[(r, c + n)] = -y;
                embed[(r + n, c)] = y;
            }
        }
        let sigma_min = embed.singular_values().min();
        let value = T::one() / sigma_min;
        if value > best {
            best = value;
        }
    }
    Ok(best)
}

/// Constants of a geometric decay bound `||A^k|| <= gamma_coeff * rate^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate<T: Real> {
    pub gamma_coeff: T,
    pub rate: T,
    pub grid_points: usize,
}

/// Default decay rate halfway between the spectral radius and one.
pub fn default_rate<T: Real>(a: &DMatrix<T>) -> T {
    (T::one() + spectral_radius(a)) * T::lit(0.5)
}

/// Certifies `||A^k|| <= H_inf(Phi_{A/rho}) rho^k` and checks it for `k = 1..50`.
pub fn spectral_decay_bound<T: Real>(a: &DMatrix<T>, rho: T, grid: usize) -> Result<DecayCertificate<T>> {
    if rho >= T::one() {
        return Err(Error::InvalidParameter(format!(
            "decay rate must be below one, got {}",
            rho.to_f64_lossy()
        )));
    }
    let gamma_coeff = hinf_resolvent_norm(a, rho, grid)?;
    let slack = T::lit(1e-9);
    let mut power = a.clone();
    let mut rate_pow = rho;
    for k in 1..=DECAY_CHECK_POWERS {
        if spectral_norm(&power) > gamma_coeff * rate_pow + slack {
            return Err(Error::DecayCheckFailed { power: k });
        }
        power = &power * a;
        rate_pow *= rho;
    }
    Ok(DecayCertificate { gamma_coeff, rate: rho, grid_points: grid })
}

/// Solution of a (discounted) discrete algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct DareSolution<T: Real> {
    pub p: DMatrix<T>,
    pub k: DMatrix<T>,
    pub iterations: usize,
}

/// Optimal gain `K = -(R + gamma B^T P B)^{-1} gamma B^T P A` for a given `P`.
pub fn riccati_gain<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    r: &DMatrix<T>,
    p: &DMatrix<T>,
    gamma: T,
) -> Option<DMatrix<T>> {
    let bt_p = b.transpose() * p;
    let lhs = r + &bt_p * b * gamma;
    let rhs = &bt_p * a * gamma;
    lhs.lu().solve(&rhs).map(|k| -k)
}

/// One step of the discounted Riccati recursion on `(sqrt(gamma) A, sqrt(gamma) B)`.
pub fn riccati_step<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    p: &DMatrix<T>,
    gamma: T,
) -> Option<DMatrix<T>> {
    let k = riccati_gain(a, b, r, p, gamma)?;
    let at_p = a.transpose() * p;
    // Q + g A^T P A + g A^T P B K, with K the minimizer
    let next = q + (&at_p * a + &at_p * b * &k) * gamma;
    Some(symmetrize(&next))
}

/// Solves the discounted DARE by Riccati value iteration.
///
/// Iterates from `P = Q` until the relative Frobenius change drops below the
/// scalar's iteration tolerance, then polishes with a few Hewer (exact policy
/// iteration) steps. `gamma = 1` gives the average-cost Riccati equation.
pub fn solve_dare<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    gamma: T,
) -> Result<DareSolution<T>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::DimMismatch("dare: A, B, Q, R do not conform".into()));
    }
    if gamma <= T::zero() || gamma > T::one() {
        return Err(Error::InvalidParameter(format!("discount {} outside (0, 1]", gamma.to_f64_lossy())));
    }
    let tol = T::lit(T::ITER_TOL);
    let mut p = q.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < DARE_MAX_ITER {
        iterations += 1;
        let next = riccati_step(a, b, q, r, &p, gamma).ok_or(Error::NoConvergence(iterations))?;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NoConvergence(iterations));
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= tol * p.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(iterations));
    }
    let mut k = riccati_gain(a, b, r, &p, gamma).ok_or(Error::NoConvergence(iterations))?;
    let sqrt_gamma = gamma.sqrt();
    let closed = (a + b * &k) * sqrt_gamma;
    let radius = spectral_radius(&closed);
    if radius >= T::one() - T::lit(1e-9) {
        return Err(Error::Unstabilizable(radius.to_f64_lossy()));
    }
    for _ in 0..8 {
        let closed = (a + b * &k) * sqrt_gamma;
        let cost = q + k.transpose() * r * &k;
        let Ok(p_next) = solve_dlyap(&closed, &cost, LyapunovForm::Transposed) else {
            break;
        };
        let Some(k_next) = riccati_gain(a, b, r, &p_next, gamma) else {
            break;
        };
        let moved = (&k_next - &k).norm();
        let stable = spectral_radius(&((a + b * &k_next) * sqrt_gamma)) < T::one() - T::lit(1e-9);
        if !stable {
            break;
        }
        p = p_next;
        k = k_next;
        if moved <= tol * (T::one() + k.norm()) {
            break;
        }
    }
    Ok(DareSolution { p, k, iterations })
}
