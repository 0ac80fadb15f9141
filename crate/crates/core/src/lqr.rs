//! Exact LQR quantities used as ground truth for the estimators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lyapunov::{solve_dare, solve_dlyap, LyapunovForm};
use crate::matops::{identity, min_eig_sym, spectral_radius, symmetrize};
use crate::{Error, Real, Result};

/// Closed loops with spectral radius at or above `1 - STABILITY_MARGIN` count as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Cost criterion a controller is judged by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Discounted,
    Average,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Discounted => "discounted",
            Objective::Average => "average",
        }
    }
}

/// Linear dynamics `x' = A x + B u + w` with reward `-(x^T Q x + u^T R u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrInstance<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub gamma: T,
}

impl<T: Real> LqrInstance<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, q: DMatrix<T>, r: DMatrix<T>, gamma: T) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
            return Err(Error::DimMismatch(format!(
                "A {}x{}, B {}x{}, Q {}x{}, R {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                q.nrows(),
                q.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        if gamma <= T::zero() || gamma > T::one() {
            return Err(Error::InvalidParameter(format!(
                "discount {} outside (0, 1]",
                gamma.to_f64_lossy()
            )));
        }
        let q = symmetrize(&q);
        let r = symmetrize(&r);
        if min_eig_sym(&q)? <= T::zero() {
            return Err(Error::NotPD);
        }
        if r.nrows() > 0 && min_eig_sym(&r)? <= T::zero() {
            return Err(Error::NotPD);
        }
        Ok(Self { a, b, q, r, gamma })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `gamma / (1 - gamma)`; infinite for the undiscounted problem.
    pub fn eta(&self) -> T {
        if self.gamma >= T::one() {
            T::infinity()
        } else {
            self.gamma / (T::one() - self.gamma)
        }
    }

    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.q.clone(), self.r.clone(), gamma)
    }

    /// Instantaneous reward `-(x^T Q x + u^T R u)`.
    pub fn reward(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        -(x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }

    /// The three-state benchmark with slightly unstable coupled dynamics,
    /// `B = I`, `Q = 1e-3 I`, `R = I`.
    pub fn coupled_benchmark(gamma: T) -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01]).map(T::lit);
        Self::new(a, identity(3), identity::<T>(3) * T::lit(1e-3), identity(3), gamma)
            .expect("benchmark instance is well formed")
    }
}

/// State feedback `u = K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy<T: Real> {
    pub k: DMatrix<T>,
}

impl<T: Real> LinearPolicy<T> {
    pub fn new(k: DMatrix<T>) -> Self {
        Self { k }
    }

    pub fn zero(inst: &LqrInstance<T>) -> Self {
        Self { k: DMatrix::zeros(inst.input_dim(), inst.state_dim()) }
    }

    pub fn act(&self, x: &DVector<T>) -> DVector<T> {
        &self.k * x
    }

    fn check(&self, inst: &LqrInstance<T>) -> Result<()> {
        if self.k.shape() != (inst.input_dim(), inst.state_dim()) {
            return Err(Error::DimMismatch(format!(
                "gain is {}x{}, instance needs {}x{}",
                self.k.nrows(),
                self.k.ncols(),
                inst.input_dim(),
                inst.state_dim()
            )));
        }
        Ok(())
    }
}

/// `V(x) = -x^T P x - eta Tr(P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue<T: Real> {
    pub p: DMatrix<T>,
    pub eta: T,
}

pub fn closed_loop<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>) -> Result<DMatrix<T>> {
    pol.check(inst)?;
    Ok(&inst.a + &inst.b * &pol.k)
}

fn is_stable<T: Real>(m: &DMatrix<T>) -> (bool, T) {
    let radius = spectral_radius(m);
    (radius.is_finite() && radius < T::one() - T::lit(STABILITY_MARGIN), radius)
}

/// Whether the closed loop is stable in the sense the objective needs:
/// `sqrt(gamma) L` for discounted cost, `L` for average cost.
pub fn is_stabilizing<T: Real>(inst: &LqrInstance<T>, k: &DMatrix<T>, objective: Objective) -> bool {
    if k.shape() != (inst.input_dim(), inst.state_dim()) || !k.iter().all(|x| x.is_finite()) {
        return false;
    }
    let l = &inst.a + &inst.b * k;
    match objective {
        Objective::Discounted => is_stable(&(l * inst.gamma.sqrt())).0,
        Objective::Average => is_stable(&l).0,
    }
}

/// Cost-to-go matrix solving `(sqrt(g) L)^T P (sqrt(g) L) - P + Q + K^T R K = 0`.
fn cost_to_go<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>) -> Result<DMatrix<T>> {
    let l = closed_loop(inst, pol)?;
    let scaled = l * inst.gamma.sqrt();
    let (stable, radius) = is_stable(&scaled);
    if !stable {
        return Err(Error::DiscountedUnstable(radius.to_f64_lossy()));
    }
    let stage = &inst.q + pol.k.transpose() * &inst.r * &pol.k;
    solve_dlyap(&scaled, &stage, LyapunovForm::Transposed)
}

pub fn value_matrix<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>) -> Result<QuadraticValue<T>> {
    if inst.gamma >= T::one() {
        return Err(Error::InvalidParameter("value function needs gamma < 1".into()));
    }
    let p = cost_to_go(inst, pol)?;
    Ok(QuadraticValue { p, eta: inst.eta() })
}

pub fn stationary_covariance<T: Real>(l: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (stable, radius) = is_stable(l);
    if !stable {
        return Err(Error::Unstable(radius.to_f64_lossy()));
    }
    solve_dlyap(l, &identity(l.nrows()), LyapunovForm::Direct)
}

pub fn value_eval<T: Real>(v: &QuadraticValue<T>, x: &DVector<T>) -> Result<T> {
    if x.len() != v.p.nrows() {
        return Err(Error::DimMismatch(format!("state has length {}, value is {}x{}", x.len(), v.p.nrows(), v.p.ncols())));
    }
    Ok(-x.dot(&(&v.p * x)) - v.eta * v.p.trace())
}

/// Q-function matrix `[[Q + g A^T P A, g A^T P B], [g B^T P A, R + g B^T P B]]`.
///
/// For `gamma < 1` the Q-function is `-z^T H z - eta Tr(P)` with `z = [x; u]`.
/// For `gamma = 1` this is the relative (average-cost) Q-function matrix.
pub fn qfunction_matrix<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>) -> Result<DMatrix<T>> {
    let p = cost_to_go(inst, pol)?;
    let (n, m) = (inst.state_dim(), inst.input_dim());
    let g = inst.gamma;
    let at_p = inst.a.transpose() * &p;
    let bt_p = inst.b.transpose() * &p;
    let mut h = DMatrix::zeros(n + m, n + m);
    h.view_mut((0, 0), (n, n)).copy_from(&(&inst.q + &at_p * &inst.a * g));
    let off = &at_p * &inst.b * g;
    h.view_mut((0, n), (n, m)).copy_from(&off);
    h.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
    h.view_mut((n, n), (m, m)).copy_from(&(&inst.r + &bt_p * &inst.b * g));
    Ok(symmetrize(&h))
}

/// Greedy improvement `K = -H22^{-1} H12^T` read off a Q-function matrix.
pub fn improve_policy<T: Real>(h: &DMatrix<T>, state_dim: usize) -> Option<DMatrix<T>> {
    let total = h.nrows();
    if state_dim > total {
        return None;
    }
    let m = total - state_dim;
    let h22 = h.view((state_dim, state_dim), (m, m)).into_owned();
    let h12 = h.view((0, state_dim), (state_dim, m)).into_owned();
    let k = h22.lu().solve(&h12.transpose())?;
    k.iter().all(|x| x.is_finite()).then(|| -k)
}

/// Discounted cost `(gamma/(1-gamma)) Tr(P_K)` from `x0 = 0` under unit noise;
/// `+inf` when `sqrt(gamma)(A + BK)` is not stable.
pub fn cost_discounted<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>) -> Result<T> {
    pol.check(inst)?;
    if inst.gamma >= T::one() {
        return Err(Error::InvalidParameter("discounted cost needs gamma < 1".into()));
    }
    if !is_stabilizing(inst, &pol.k, Objective::Discounted) {
        return Ok(T::infinity());
    }
    match cost_to_go(inst, pol) {
        Ok(p) => Ok(inst.eta() * p.trace()),
        Err(Error::DiscountedUnstable(_)) | Err(Error::Unstable(_)) => Ok(T::infinity()),
        Err(e) => Err(e),
    }
}

/// Average cost `Tr((Q + K^T R K) P_inf)`; `+inf` when `A + BK` is not stable.
pub fn cost_average<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>) -> Result<T> {
    let l = closed_loop(inst, pol)?;
    if !is_stable(&l).0 {
        return Ok(T::infinity());
    }
    let p_inf = match stationary_covariance(&l) {
        Ok(p) => p,
        Err(Error::Unstable(_)) => return Ok(T::infinity()),
        Err(e) => return Err(e),
    };
    let stage = &inst.q + pol.k.transpose() * &inst.r * &pol.k;
    Ok((stage * p_inf).trace())
}

pub fn cost<T: Real>(inst: &LqrInstance<T>, pol: &LinearPolicy<T>, objective: Objective) -> Result<T> {
    match objective {
        Objective::Discounted => cost_discounted(inst, pol),
        Objective::Average => cost_average(inst, pol),
    }
}

/// Optimal gain for the objective (discount ignored for average cost).
pub fn optimal_gain<T: Real>(inst: &LqrInstance<T>, objective: Objective) -> Result<DMatrix<T>> {
    let gamma = match objective {
        Objective::Discounted => inst.gamma,
        Objective::Average => T::one(),
    };
    Ok(solve_dare(&inst.a, &inst.b, &inst.q, &inst.r, gamma)?.k)
}

/// `(J(K) - J*) / J*`, infinite when `K` fails to stabilize.
pub fn relative_cost_error<T: Real>(
    inst: &LqrInstance<T>,
    k: &DMatrix<T>,
    optimal_cost: T,
    objective: Objective,
) -> Result<T> {
    let j = cost(inst, &LinearPolicy::new(k.clone()), objective)?;
    if !j.is_finite() {
        return Ok(T::infinity());
    }
    Ok((j - optimal_cost) / optimal_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::diag;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> DMatrix<f64> {
        identity(n)
    }

    fn diag_instance(rho: f64, gamma: f64) -> (LqrInstance<f64>, LinearPolicy<f64>) {
        let inst = LqrInstance::new(eye(5), eye(5), eye(5) * 0.1, eye(5) * 0.1, gamma).unwrap();
        let mut ks = vec![-(1.0 - rho); 4];
        ks.push(-(1.0 - 0.01));
        (inst, LinearPolicy::new(diag(&ks)))
    }

    #[test]
    fn instance_validation() {
        assert!(LqrInstance::new(eye(2), eye(3), eye(2), eye(3), 0.9).is_err());
        assert!(matches!(LqrInstance::new(eye(2), eye(2), -eye(2), eye(2), 0.9), Err(Error::NotPD)));
        assert!(LqrInstance::new(eye(2), eye(2), eye(2), eye(2), 1.5).is_err());
    }

    #[test]
    fn closed_loop_cases() {
        let inst = LqrInstance::new(eye(5), eye(5), eye(5), eye(5), 0.9).unwrap();
        let l = closed_loop(&inst, &LinearPolicy::new(eye(5) * -0.5)).unwrap();
        assert!((l - eye(5) * 0.5).norm() < 1e-15);
        let (inst, pol) = diag_instance(0.5, 0.9);
        let l = closed_loop(&inst, &pol).unwrap();
        assert!((l - diag::<f64>(&[0.5, 0.5, 0.5, 0.5, 0.01])).norm() < 1e-15);
        let a = dmatrix![0.3, 0.1; 0.0, 0.2];
        let inst = LqrInstance::new(a.clone(), DMatrix::zeros(2, 2), eye(2), eye(2), 0.9).unwrap();
        assert_eq!(closed_loop(&inst, &LinearPolicy::new(eye(2))).unwrap(), a);
        assert!(closed_loop(&inst, &LinearPolicy::new(eye(3))).is_err());
    }

    #[test]
    fn value_matrix_geometric_series() {
        let (rho, gamma) = (0.8, 0.9);
        let q = dmatrix![2.0, 0.0; 0.0, 3.0];
        let inst = LqrInstance::new(eye(2) * rho, DMatrix::zeros(2, 1), q.clone(), dmatrix![1.0], gamma).unwrap();
        let v = value_matrix(&inst, &LinearPolicy::zero(&inst)).unwrap();
        assert!((&v.p - q / (1.0 - gamma * rho * rho)).norm() < 1e-12);
        assert!((v.eta - 9.0).abs() < 1e-12);
    }

    #[test]
    fn value_matrix_unstable() {
        let inst = LqrInstance::new(eye(2) * 1.2, DMatrix::zeros(2, 1), eye(2), dmatrix![1.0], 0.9).unwrap();
        assert!(matches!(
            value_matrix(&inst, &LinearPolicy::zero(&inst)),
            Err(Error::DiscountedUnstable(_))
        ));
    }

    #[test]
    fn stationary_covariance_cases() {
        let p = stationary_covariance(&diag::<f64>(&[0.1, 0.5, 0.9])).unwrap();
        let expected = diag::<f64>(&[1.0 / 0.99, 1.0 / 0.75, 1.0 / 0.19]);
        assert!((p - expected).norm() < 1e-10);
        assert!((stationary_covariance(&DMatrix::<f64>::zeros(3, 3)).unwrap() - eye(3)).norm() < 1e-15);
    }

    #[test]
    fn stationary_covariance_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let l = &m * (0.9 / spectral_radius(&m));
            let p = stationary_covariance(&l).unwrap();
            assert!(min_eig_sym(&p).unwrap() >= 1.0 - 1e-9);
            assert!((&p - eye(4) - &l * &p * l.transpose()).norm() < 1e-9 * p.norm());
        }
    }

    #[test]
    fn value_eval_cases() {
        let v = QuadraticValue { p: eye(2), eta: 9.0 };
        assert_eq!(value_eval(&v, &DVector::zeros(2)).unwrap(), -18.0);
        assert_eq!(value_eval(&v, &DVector::from_vec(vec![1.0, 1.0])).unwrap(), -20.0);
        let p = dmatrix![1.0, 2.0; 0.0, 3.0];
        let x = DVector::from_vec(vec![0.3f64, -1.2]);
        let a = value_eval(&QuadraticValue { p: p.clone(), eta: 0.5 }, &x).unwrap();
        let b = value_eval(&QuadraticValue { p: symmetrize(&p), eta: 0.5 }, &x).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(value_eval(&v, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn bellman_residual_random_states() {
        let (inst, pol) = diag_instance(0.9, 0.9);
        let v = value_matrix(&inst, &pol).unwrap();
        let l = closed_loop(&inst, &pol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0));
            let lx = &l * &x;
            let next = -lx.dot(&(&v.p * &lx)) - v.p.trace() - v.eta * v.p.trace();
            let rhs = inst.reward(&x, &pol.act(&x)) + inst.gamma * next;
            assert!((value_eval(&v, &x).unwrap() - rhs).abs() <= 1e-8);
        }
    }

    #[test]
    fn qfunction_decoupled_input() {
        let a = dmatrix![0.5, 0.1; 0.0, 0.4];
        let r = dmatrix![2.0];
        let inst = LqrInstance::new(a.clone(), DMatrix::zeros(2, 1), eye(2), r.clone(), 0.9).unwrap();
        let pol = LinearPolicy::zero(&inst);
        let h = qfunction_matrix(&inst, &pol).unwrap();
        let v = value_matrix(&inst, &pol).unwrap();
        let top = eye(2) + a.transpose() * &v.p * &a * 0.9;
        assert!((h.view((0, 0), (2, 2)) - top).norm() < 1e-12);
        assert!(h.view((0, 2), (2, 1)).norm() < 1e-15);
        assert!((h[(2, 2)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn qfunction_scalar_hand_computation() {
        // a=b=q=r=1, gamma=0.5, k=-0.5: L = 0.5, p = 1.25 / (1 - 0.125) = 10/7
        let one = dmatrix![1.0];
        let inst = LqrInstance::new(one.clone(), one.clone(), one.clone(), one, 0.5).unwrap();
        let pol = LinearPolicy::new(dmatrix![-0.5f64]);
        let p = 10.0 / 7.0;
        assert!((value_matrix(&inst, &pol).unwrap().p[(0, 0)] - p).abs() < 1e-13);
        let h = qfunction_matrix(&inst, &pol).unwrap();
        let expected = dmatrix![1.0 + 0.5 * p, 0.5 * p; 0.5 * p, 1.0 + 0.5 * p];
        assert!((h - expected).norm() < 1e-13);
    }

    #[test]
    fn qfunction_matches_bellman() {
        let inst = LqrInstance::<f64>::coupled_benchmark(0.98);
        let pol = LinearPolicy::new(eye(3) * 0.6 - &inst.a);
        let h = qfunction_matrix(&inst, &pol).unwrap();
        let v = value_matrix(&inst, &pol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let u = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let z = DVector::from_iterator(6, x.iter().chain(u.iter()).copied());
            let q_val = -z.dot(&(&h * &z)) - v.eta * v.p.trace();
            let mean_next = &inst.a * &x + &inst.b * &u;
            let expected_v = -mean_next.dot(&(&v.p * &mean_next)) - v.p.trace() - v.eta * v.p.trace();
            let rhs = inst.reward(&x, &u) + inst.gamma * expected_v;
            assert!((q_val - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn exact_policy_iteration_reaches_dare() {
        let inst = LqrInstance::<f64>::coupled_benchmark(0.98);
        let mut k = eye(3) * 0.6 - &inst.a;
        let mut prev_cost = f64::INFINITY;
        for _ in 0..50 {
            let pol = LinearPolicy::new(k.clone());
            let j = cost_discounted(&inst, &pol).unwrap();
            assert!(j <= prev_cost + 1e-10);
            prev_cost = j;
            k = improve_policy(&qfunction_matrix(&inst, &pol).unwrap(), 3).unwrap();
        }
        let k_star = optimal_gain(&inst, Objective::Discounted).unwrap();
        assert!((k - k_star).norm() < 1e-8);
    }

    #[test]
    fn cost_cases() {
        let inst = LqrInstance::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), eye(2), dmatrix![1.0], 0.5).unwrap();
        let pol = LinearPolicy::zero(&inst);
        assert!((cost_discounted(&inst, &pol).unwrap() - 2.0).abs() < 1e-14);
        assert!((cost_average(&inst, &pol).unwrap() - 2.0).abs() < 1e-14);
        let bad = LqrInstance::<f64>::coupled_benchmark(0.98);
        let zero = LinearPolicy::zero(&bad);
        assert!(cost_discounted(&bad, &zero).unwrap().is_infinite());
        assert!(cost_average(&bad, &zero).unwrap().is_infinite());
    }

    #[test]
    fn benchmark_initial_relative_errors() {
        let inst = LqrInstance::<f64>::coupled_benchmark(0.98);
        let k0 = eye(3) * 0.6 - &inst.a;
        let j_star = cost_discounted(&inst, &LinearPolicy::new(optimal_gain(&inst, Objective::Discounted).unwrap())).unwrap();
        let rel = relative_cost_error(&inst, &k0, j_star, Objective::Discounted).unwrap();
        assert!((rel - 6.603).abs() / 6.603 < 2e-3, "discounted {rel}");
        let j_star = cost_average(&inst, &LinearPolicy::new(optimal_gain(&inst, Objective::Average).unwrap())).unwrap();
        let rel = relative_cost_error(&inst, &k0, j_star, Objective::Average).unwrap();
        assert!((rel - 4.778).abs() / 4.778 < 2e-3, "average {rel}");
    }

    #[test]
    fn optimal_gain_beats_random_gains() {
        let inst = LqrInstance::<f64>::coupled_benchmark(0.98);
        let k_star = optimal_gain(&inst, Objective::Discounted).unwrap();
        let j_star = cost_discounted(&inst, &LinearPolicy::new(k_star.clone())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut tested = 0;
        while tested < 100 {
            let k = &k_star + DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
            let j = cost_discounted(&inst, &LinearPolicy::new(k)).unwrap();
            if j.is_finite() {
                assert!(j_star <= j + 1e-12);
                tested += 1;
            }
        }
        // local optimality: single-entry perturbations do not help
        for i in 0..3 {
            for j in 0..3 {
                for step in [-1e-3, 1e-3] {
                    let mut k = k_star.clone();
                    k[(i, j)] += step;
                    assert!(cost_discounted(&inst, &LinearPolicy::new(k)).unwrap() >= j_star - 1e-12);
                }
            }
        }
    }
}
