//! LSTD, LSTD-Q, least-squares policy iteration and the model-based baseline.
//!
//! Rewards are negative costs, so the raw LSTD weight vector estimates
//! `-svec(P)`. Every estimator here returns matrices in the positive cost
//! convention used by [`crate::lqr`].

use nalgebra::{DMatrix, DVector};

use crate::lqr::{improve_policy, is_stabilizing, qfunction_matrix, LinearPolicy, LqrInstance, Objective};
use crate::lyapunov::solve_dare;
use crate::matops::{default_rank_tol, max_eig_sym, min_eig_sym, pinv_solve, pinv_solve_multi, smat_entries, svec_unchecked, sym_dim, symmetrize, SymVec};
use crate::simulate::{feature_phi, feature_phi_q, feature_psi, stack, Trajectory, Transition};
use crate::{Error, Real, Result};

/// Stopping tolerance on `||K_{t+1} - K_t||_F`.
pub const LSPI_TOL: f64 = 1e-6;
pub const LSPI_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct LstdEstimate<T: Real> {
    pub p_hat: DMatrix<T>,
    /// Raw solution of the projected Bellman equation (estimates `-svec(P)`).
    pub w_hat: DVector<T>,
    pub effective_rank: usize,
    /// `lambda_min((1/N) Phi^T Phi)`, clamped at zero.
    pub min_eig_cov: T,
}

/// Row-stacked features of a trajectory: `Phi`, `Phi_+` and the reward vector.
#[derive(Debug, Clone)]
pub struct FeatureMatrices<T: Real> {
    pub phi: DMatrix<T>,
    pub phi_next: DMatrix<T>,
    pub rewards: DVector<T>,
}

impl<T: Real> FeatureMatrices<T> {
    pub fn from_trajectory(traj: &Trajectory<T>, eta: T) -> Result<Self> {
        if traj.diverged {
            return Err(Error::NonFinite);
        }
        let big_n = traj.len();
        let n = traj.transitions.first().map_or(0, |t| t.x.len());
        let d = sym_dim(n);
        let mut phi = DMatrix::zeros(big_n, d);
        let mut phi_next = DMatrix::zeros(big_n, d);
        let mut rewards = DVector::zeros(big_n);
        for (k, t) in traj.transitions.iter().enumerate() {
            phi.row_mut(k).tr_copy_from(feature_phi(&t.x, eta).entries());
            phi_next.row_mut(k).tr_copy_from(feature_phi(&t.x_next, eta).entries());
            rewards[k] = t.r;
        }
        Ok(Self { phi, phi_next, rewards })
    }

    /// `A = Phi^T (Phi - gamma Phi_+)` and `b = Phi^T R`.
    pub fn normal_equations(&self, gamma: T) -> (DMatrix<T>, DVector<T>) {
        let a = self.phi.transpose() * (&self.phi - &self.phi_next * gamma);
        let b = self.phi.transpose() * &self.rewards;
        (a, b)
    }
}

/// LSTD estimate of the value matrix of the policy that generated `traj`.
pub fn lstd<T: Real>(traj: &Trajectory<T>, gamma: T, eta: T) -> Result<LstdEstimate<T>> {
    let feats = FeatureMatrices::from_trajectory(traj, eta)?;
    lstd_from_features(&feats, gamma)
}

pub fn lstd_from_features<T: Real>(feats: &FeatureMatrices<T>, gamma: T) -> Result<LstdEstimate<T>> {
    let (a, b) = feats.normal_equations(gamma);
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (w_hat, effective_rank) = pinv_solve(&a, &b, default_rank_tol())?;
    let p_hat = -symmetrize(&smat_entries(&w_hat)?);
    let min_eig_cov = gram_min_eig(&feats.phi)?;
    Ok(LstdEstimate { p_hat, w_hat, effective_rank, min_eig_cov })
}

fn gram_min_eig<T: Real>(phi: &DMatrix<T>) -> Result<T> {
    let rows = phi.nrows();
    if rows == 0 || phi.ncols() == 0 {
        return Ok(T::zero());
    }
    let gram = symmetrize(&(phi.transpose() * phi / T::lit(rows as f64)));
    let lo = min_eig_sym(&gram)?;
    // eigenvalues at round-off level of the largest one are a rank deficiency
    if lo <= default_rank_tol::<T>() * max_eig_sym(&gram)? {
        return Ok(T::zero());
    }
    Ok(lo)
}

/// `lambda_min((1/N) sum phi_k phi_k^T)`, clamped at zero.
pub fn empirical_min_eig<T: Real>(features: &[SymVec<T>]) -> Result<T> {
    let Some(first) = features.first() else {
        return Err(Error::InvalidParameter("no features".into()));
    };
    let d = first.len();
    let mut phi = DMatrix::zeros(features.len(), d);
    for (k, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(Error::DimMismatch("features of different lengths".into()));
        }
        phi.row_mut(k).tr_copy_from(f.entries());
    }
    gram_min_eig(&phi)
}

/// Deterministic bound `eta ||Phi^T (Phi_+ - Psi) w|| / lambda_min(Phi^T Phi)` on the
/// LSTD error `||P_hat - P||_F`, where `w = svec(P)` is the true value matrix of the
/// closed loop `l` and `Psi` stacks the exact conditional feature means.
///
/// Infinite when `Phi` is rank deficient.
pub fn structural_error_bound<T: Real>(traj: &Trajectory<T>, l: &DMatrix<T>, p_true: &DMatrix<T>, eta: T) -> Result<T> {
    let feats = FeatureMatrices::from_trajectory(traj, eta)?;
    let w = svec_unchecked(p_true).into_entries();
    let mut psi = DMatrix::zeros(feats.phi.nrows(), feats.phi.ncols());
    for (k, t) in traj.transitions.iter().enumerate() {
        psi.row_mut(k).tr_copy_from(feature_psi(&t.x, l, eta)?.entries());
    }
    let numerator = (feats.phi.transpose() * ((&feats.phi_next - psi) * w)).norm();
    let lambda = min_eig_sym(&symmetrize(&(feats.phi.transpose() * &feats.phi)))?;
    if lambda <= T::zero() {
        return Ok(T::infinity());
    }
    Ok(eta * numerator / lambda)
}

fn check_data<T: Real>(data: &[Transition<T>], k: &DMatrix<T>) -> Result<(usize, usize)> {
    let first = data.first().ok_or_else(|| Error::InvalidParameter("empty data set".into()))?;
    let (n, m) = (first.x.len(), first.u.len());
    if k.shape() != (m, n) {
        return Err(Error::DimMismatch(format!("gain {}x{} for state {n}, input {m}", k.nrows(), k.ncols())));
    }
    let finite = data.iter().all(|t| {
        t.r.is_finite() && t.x.iter().chain(t.u.iter()).chain(t.x_next.iter()).all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::NonFinite);
    }
    Ok((n, m))
}

/// Output of an LSTD-Q solve.
#[derive(Debug, Clone)]
pub struct QEstimate<T: Real> {
    /// Q-function matrix in the positive cost convention.
    pub h: DMatrix<T>,
    pub effective_rank: usize,
    /// Average-cost estimate; zero for the discounted solve.
    pub average_cost: T,
}

/// LSTD-Q estimate of the discounted Q-function matrix of `u = K x`.
pub fn lstdq<T: Real>(data: &[Transition<T>], k: &DMatrix<T>, gamma: T, eta: T) -> Result<QEstimate<T>> {
    let (n, m) = check_data(data, k)?;
    let d = sym_dim(n + m);
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for t in data {
        let f = feature_phi_q(&t.x, &t.u, k, eta)?.into_entries();
        let f_next = feature_phi_q(&t.x_next, &(k * &t.x_next), k, eta)?.into_entries();
        a += &f * (&f - f_next * gamma).transpose();
        b += &f * t.r;
    }
    let (p, effective_rank) = pinv_solve(&a, &b, default_rank_tol())?;
    let h = -symmetrize(&smat_entries(&p)?);
    Ok(QEstimate { h, effective_rank, average_cost: T::zero() })
}

/// Relative Q-function estimate for the average-cost objective.
///
/// Fits `z^T H z + lambda = c(x, u) + z'^T H z'` with `z' = [x'; K x']` by
/// instrumental-variable least squares over `[svec(z z^T); 1]`.
pub fn lstdq_average<T: Real>(data: &[Transition<T>], k: &DMatrix<T>) -> Result<QEstimate<T>> {
    let (n, m) = check_data(data, k)?;
    let d = sym_dim(n + m);
    let mut a = DMatrix::zeros(d + 1, d + 1);
    let mut b = DVector::zeros(d + 1);
    let mut f = DVector::zeros(d + 1);
    let mut g = DVector::zeros(d + 1);
    for t in data {
        let z = stack(&t.x, &t.u);
        let z_next = stack(&t.x_next, &(k * &t.x_next));
        let cur = svec_unchecked(&(&z * z.transpose())).into_entries();
        let nxt = svec_unchecked(&(&z_next * z_next.transpose())).into_entries();
        f.rows_mut(0, d).copy_from(&cur);
        f[d] = T::one();
        g.rows_mut(0, d).copy_from(&(&cur - nxt));
        g[d] = T::one();
        a += &f * g.transpose();
        b += &f * (-t.r);
    }
    let (p, effective_rank) = pinv_solve(&a, &b, default_rank_tol())?;
    let h = symmetrize(&smat_entries(&p.rows(0, d).into_owned())?);
    Ok(QEstimate { h, effective_rank, average_cost: p[d] })
}

/// Anything that can produce a Q-function matrix for a gain.
pub trait QFunctionSource<T: Real> {
    fn q_matrix(&self, k: &DMatrix<T>) -> Result<DMatrix<T>>;
}

/// LSTD-Q over a fixed data set.
#[derive(Debug, Clone, Copy)]
pub struct LstdQ<'a, T: Real> {
    pub data: &'a [Transition<T>],
    pub gamma: T,
    pub eta: T,
    pub objective: Objective,
}

impl<T: Real> QFunctionSource<T> for LstdQ<'_, T> {
    fn q_matrix(&self, k: &DMatrix<T>) -> Result<DMatrix<T>> {
        match self.objective {
            Objective::Discounted => Ok(lstdq(self.data, k, self.gamma, self.eta)?.h),
            Objective::Average => Ok(lstdq_average(self.data, k)?.h),
        }
    }
}

/// Analytic Q-function matrices of a known instance.
#[derive(Debug, Clone)]
pub struct ExactQ<T: Real> {
    pub instance: LqrInstance<T>,
    pub objective: Objective,
}

impl<T: Real> QFunctionSource<T> for ExactQ<T> {
    fn q_matrix(&self, k: &DMatrix<T>) -> Result<DMatrix<T>> {
        let pol = LinearPolicy::new(k.clone());
        match self.objective {
            Objective::Discounted => qfunction_matrix(&self.instance, &pol),
            Objective::Average => qfunction_matrix(&self.instance.with_gamma(T::one())?, &pol),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LspiOutcome<T: Real> {
    /// `None` marks a failed run (scored as `+inf`).
    pub final_gain: Option<DMatrix<T>>,
    pub iterations: usize,
    /// `K_0, K_1, ...` up to the last gain produced.
    pub gain_history: Vec<DMatrix<T>>,
    pub converged: bool,
}

impl<T: Real> LspiOutcome<T> {
    pub fn failed(&self) -> bool {
        self.final_gain.is_none()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LspiOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LspiOptions {
    fn default() -> Self {
        Self { tol: LSPI_TOL, max_iter: LSPI_MAX_ITER }
    }
}

/// Policy iteration with Q-functions from `source`.
///
/// Every gain, `K_0` included, is checked for stability on `truth` under
/// `objective`; the first violation ends the run as a failure.
pub fn lspi_with_source<T: Real, S: QFunctionSource<T>>(
    source: &S,
    k0: &DMatrix<T>,
    truth: &LqrInstance<T>,
    objective: Objective,
    opts: LspiOptions,
) -> Result<LspiOutcome<T>> {
    if k0.shape() != (truth.input_dim(), truth.state_dim()) {
        return Err(Error::DimMismatch("initial gain does not match instance".into()));
    }
    let n = truth.state_dim();
    let mut history = vec![k0.clone()];
    let fail = |history: Vec<DMatrix<T>>, iterations| LspiOutcome { final_gain: None, iterations, gain_history: history, converged: false };
    if !is_stabilizing(truth, k0, objective) {
        return Ok(fail(history, 0));
    }
    let mut k = k0.clone();
    for it in 1..=opts.max_iter {
        let h = match source.q_matrix(&k) {
            Ok(h) => h,
            Err(Error::NonFinite) | Err(Error::DiscountedUnstable(_)) | Err(Error::Unstable(_)) => {
                return Ok(fail(history, it));
            }
            Err(e) => return Err(e),
        };
        let Some(next) = improve_policy(&h, n) else {
            return Ok(fail(history, it));
        };
        history.push(next.clone());
        if !is_stabilizing(truth, &next, objective) {
            return Ok(fail(history, it));
        }
        let step = (&next - &k).norm();
        k = next;
        if step <= T::lit(opts.tol) {
            return Ok(LspiOutcome { final_gain: Some(k), iterations: it, gain_history: history, converged: true });
        }
    }
    Ok(LspiOutcome { final_gain: Some(k), iterations: opts.max_iter, gain_history: history, converged: false })
}

/// LSPI on a fixed data set (the data set is reused at every iteration).
pub fn lspi<T: Real>(
    data: &[Transition<T>],
    k0: &DMatrix<T>,
    truth: &LqrInstance<T>,
    objective: Objective,
    opts: LspiOptions,
) -> Result<LspiOutcome<T>> {
    let gamma = match objective {
        Objective::Discounted => truth.gamma,
        Objective::Average => T::one(),
    };
    let eta = match objective {
        Objective::Discounted => truth.eta(),
        Objective::Average => T::zero(),
    };
    lspi_with_source(&LstdQ { data, gamma, eta, objective }, k0, truth, objective, opts)
}

/// Least-squares estimate of `(A, B)`.
#[derive(Debug, Clone)]
pub struct SysId<T: Real> {
    pub a_hat: DMatrix<T>,
    pub b_hat: DMatrix<T>,
    pub rank: usize,
}

/// Minimum-norm least-squares fit of `x'` against `[x; u]`, whatever the rank.
pub fn ols_sysid_min_norm<T: Real>(data: &[Transition<T>]) -> Result<SysId<T>> {
    let first = data.first().ok_or_else(|| Error::InvalidParameter("empty data set".into()))?;
    let (n, m) = (first.x.len(), first.u.len());
    let mut z = DMatrix::zeros(data.len(), n + m);
    let mut y = DMatrix::zeros(data.len(), n);
    for (k, t) in data.iter().enumerate() {
        z.row_mut(k).tr_copy_from(&stack(&t.x, &t.u));
        y.row_mut(k).tr_copy_from(&t.x_next);
    }
    if !z.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let sol = pinv_solve_multi(&z, &y, default_rank_tol())?;
    let theta = sol.x.transpose();
    Ok(SysId {
        a_hat: theta.columns(0, n).into_owned(),
        b_hat: theta.columns(n, m).into_owned(),
        rank: sol.rank,
    })
}

/// [`ols_sysid_min_norm`] that rejects rank-deficient regressors.
pub fn ols_sysid<T: Real>(data: &[Transition<T>]) -> Result<SysId<T>> {
    let fit = ols_sysid_min_norm(data)?;
    let needed = fit.a_hat.ncols() + fit.b_hat.ncols();
    if fit.rank < needed {
        return Err(Error::RankDeficient { rank: fit.rank, needed });
    }
    Ok(fit)
}

/// Certainty-equivalent gain: the optimal controller for `(A_hat, B_hat)`.
pub fn nominal_controller<T: Real>(
    a_hat: &DMatrix<T>,
    b_hat: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    gamma: T,
    objective: Objective,
) -> Result<DMatrix<T>> {
    let gamma = match objective {
        Objective::Discounted => gamma,
        Objective::Average => T::one(),
    };
    Ok(solve_dare(a_hat, b_hat, q, r, gamma)?.k)
}
