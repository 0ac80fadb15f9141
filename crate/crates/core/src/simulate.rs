//! Seeded trajectory generation, LQR feature maps and the blocked index partition.
//!
//! Every rollout starts from `X_0 = 0`. The recorded transitions are
//! `(X_k, U_k, R_k, X_{k+1})` for `k = 1..=N`, so `X_1` is the first state
//! after one step of noise.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::lqr::{LinearPolicy, LqrInstance};
use crate::matops::{identity, svec_unchecked, SymVec};
use crate::{Error, Real, Result};

/// ChaCha stream carrying the process noise `W_k`.
pub const NOISE_STREAM: u64 = 0;
/// ChaCha stream carrying exploration inputs.
pub const INPUT_STREAM: u64 = 1;
/// ChaCha stream that hands out per-rollout seeds.
pub const SEED_STREAM: u64 = 2;
/// States whose norm exceeds this mark the trajectory as diverged.
pub const DIVERGENCE_NORM: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T: Real> {
    pub x: DVector<T>,
    pub u: DVector<T>,
    pub r: T,
    pub x_next: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub transitions: Vec<Transition<T>>,
    pub seed: u64,
    pub noise_scale: T,
    /// Set when some state left the finite range.
    pub diverged: bool,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        !self.diverged
    }

    /// The first `len` transitions, keeping seed and flags.
    pub fn prefix(&self, len: usize) -> Trajectory<T> {
        let transitions = self.transitions[..len.min(self.len())].to_vec();
        let diverged = transitions.iter().any(|t| !transition_finite(t));
        Trajectory { transitions, seed: self.seed, noise_scale: self.noise_scale, diverged }
    }

    /// States `X_1, ..., X_N` (without the final successor).
    pub fn states(&self) -> impl Iterator<Item = &DVector<T>> {
        self.transitions.iter().map(|t| &t.x)
    }
}

fn transition_finite<T: Real>(t: &Transition<T>) -> bool {
    let bound = T::lit(DIVERGENCE_NORM);
    t.x.iter().chain(t.x_next.iter()).chain(t.u.iter()).all(|v| v.is_finite())
        && t.r.is_finite()
        && t.x.norm() <= bound
        && t.x_next.norm() <= bound
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng, len: usize, scale: T) -> DVector<T> {
    DVector::from_iterator(
        len,
        (0..len).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z) * scale
        }),
    )
}

fn run<T: Real>(
    inst: &LqrInstance<T>,
    length: usize,
    seed: u64,
    noise_scale: T,
    mut input: impl FnMut(&DVector<T>) -> DVector<T>,
    noise_seed: u64,
) -> Trajectory<T> {
    let n = inst.state_dim();
    let mut noise = stream_rng(noise_seed, NOISE_STREAM);
    let mut x = DVector::zeros(n);
    // X_1 = A X_0 + B U_0 + W_0 with X_0 = 0
    let u0 = input(&x);
    x = &inst.a * &x + &inst.b * &u0 + gaussian(&mut noise, n, noise_scale);
    let mut transitions = Vec::with_capacity(length);
    let mut diverged = false;
    for _ in 0..length {
        let u = input(&x);
        let r = inst.reward(&x, &u);
        let x_next = &inst.a * &x + &inst.b * &u + gaussian(&mut noise, n, noise_scale);
        let t = Transition { x, u, r, x_next: x_next.clone() };
        diverged |= !transition_finite(&t);
        transitions.push(t);
        x = x_next;
    }
    Trajectory { transitions, seed, noise_scale, diverged }
}

/// Closed-loop rollout `X_{k+1} = (A + BK) X_k + W_k`, `W_k ~ N(0, noise_scale^2 I)`.
pub fn rollout_policy<T: Real>(
    inst: &LqrInstance<T>,
    pol: &LinearPolicy<T>,
    length: usize,
    seed: u64,
    noise_scale: T,
) -> Result<Trajectory<T>> {
    if length == 0 {
        return Err(Error::InvalidParameter("rollout length must be at least 1".into()));
    }
    if pol.k.shape() != (inst.input_dim(), inst.state_dim()) {
        return Err(Error::DimMismatch("policy gain does not match instance".into()));
    }
    Ok(run(inst, length, seed, noise_scale, |x| pol.act(x), seed))
}

/// Open-loop rollout with i.i.d. standard normal inputs and unit process noise.
pub fn rollout_explore<T: Real>(inst: &LqrInstance<T>, length: usize, seed: u64) -> Result<Trajectory<T>> {
    rollout_explore_streams(inst, length, seed, seed, T::one())
}

/// Exploration rollout with separately seeded noise and input streams.
pub fn rollout_explore_streams<T: Real>(
    inst: &LqrInstance<T>,
    length: usize,
    noise_seed: u64,
    input_seed: u64,
    noise_scale: T,
) -> Result<Trajectory<T>> {
    if length == 0 {
        return Err(Error::InvalidParameter("rollout length must be at least 1".into()));
    }
    let m = inst.input_dim();
    let mut inputs = stream_rng(input_seed, INPUT_STREAM);
    Ok(run(
        inst,
        length,
        noise_seed,
        noise_scale,
        |_| gaussian(&mut inputs, m, T::one()),
        noise_seed,
    ))
}

/// `M` independent exploration rollouts of length `N`, flattened in rollout order.
///
/// Per-rollout seeds are drawn from [`SEED_STREAM`] of `seed`, so the first `M'`
/// rollouts do not depend on `M`.
pub fn collect_rollouts<T: Real>(
    inst: &LqrInstance<T>,
    rollouts: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<Transition<T>>> {
    let mut seeds = stream_rng(seed, SEED_STREAM);
    let mut data = Vec::with_capacity(rollouts * length);
    for _ in 0..rollouts {
        data.extend(rollout_explore(inst, length, seeds.next_u64())?.transitions);
    }
    Ok(data)
}

/// `phi(x) = svec(x x^T + eta I)`.
pub fn feature_phi<T: Real>(x: &DVector<T>, eta: T) -> SymVec<T> {
    let n = x.len();
    svec_unchecked(&(x * x.transpose() + identity::<T>(n) * eta))
}

/// `phi(x, u) = svec([x; u][x; u]^T + eta [I; K][I; K]^T)`.
pub fn feature_phi_q<T: Real>(x: &DVector<T>, u: &DVector<T>, k: &DMatrix<T>, eta: T) -> Result<SymVec<T>> {
    if k.shape() != (u.len(), x.len()) {
        return Err(Error::DimMismatch(format!(
            "gain {}x{} vs state {} and input {}",
            k.nrows(),
            k.ncols(),
            x.len(),
            u.len()
        )));
    }
    let z = stack(x, u);
    let mut m = &z * z.transpose();
    if eta != T::zero() {
        let ik = stacked_gain(k);
        m += &ik * ik.transpose() * eta;
    }
    Ok(svec_unchecked(&m))
}

/// `[x; u]`.
pub fn stack<T: Real>(x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

/// `[I; K]`.
pub fn stacked_gain<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let (m, n) = k.shape();
    let mut ik = DMatrix::zeros(n + m, n);
    ik.view_mut((0, 0), (n, n)).copy_from(&identity::<T>(n));
    ik.view_mut((n, 0), (m, n)).copy_from(k);
    ik
}

/// `psi(x) = E[phi(x') | x] = svec(L x x^T L^T + (1 + eta) I)` under unit noise.
pub fn feature_psi<T: Real>(x: &DVector<T>, l: &DMatrix<T>, eta: T) -> Result<SymVec<T>> {
    if l.shape() != (x.len(), x.len()) {
        return Err(Error::DimMismatch("closed loop does not match state".into()));
    }
    let lx = l * x;
    Ok(svec_unchecked(&(&lx * lx.transpose() + identity::<T>(x.len()) * (T::one() + eta))))
}

/// Index sets `I_j = {k in 1..=N : (k - 1) mod a = j - 1}` (1-based).
pub fn block_partition(len: usize, blocks: usize) -> Result<Vec<Vec<usize>>> {
    if blocks == 0 || blocks > len {
        return Err(Error::BadBlockCount { len, blocks });
    }
    let mut sets = vec![Vec::with_capacity(len / blocks + 1); blocks];
    for k in 1..=len {
        sets[(k - 1) % blocks].push(k);
    }
    Ok(sets)
}

/// Writes a trajectory as CSV with columns `k, x0.., u0.., r, xn0..`.
pub fn write_trajectory_csv<T: Real, W: Write>(traj: &Trajectory<T>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let (n, m) = match traj.transitions.first() {
        Some(t) => (t.x.len(), t.u.len()),
        None => (0, 0),
    };
    let mut header = vec!["k".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("r".into());
    header.extend((0..n).map(|i| format!("xn{i}")));
    wtr.write_record(&header)?;
    for (k, t) in traj.transitions.iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        let fmt = |v: T| format!("{:e}", v.to_f64_lossy());
        row.extend(t.x.iter().map(|&v| fmt(v)));
        row.extend(t.u.iter().map(|&v| fmt(v)));
        row.push(fmt(t.r));
        row.extend(t.x_next.iter().map(|&v| fmt(v)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_trajectory_csv`]. Seed and noise scale are not stored.
pub fn read_trajectory_csv<T: Real, R: Read>(reader: R) -> Result<Trajectory<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let n = headers.iter().filter(|h| h.starts_with('x') && !h.starts_with("xn")).count();
    let m = headers.iter().filter(|h| h.starts_with('u')).count();
    if headers.len() != 2 + 2 * n + m {
        return Err(Error::Config("trajectory CSV header has unexpected columns".into()));
    }
    let mut transitions = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let take = |from: usize, len: usize| DVector::from_iterator(len, vals[from..from + len].iter().map(|&v| T::lit(v)));
        transitions.push(Transition {
            x: take(0, n),
            u: take(n, m),
            r: T::lit(vals[n + m]),
            x_next: take(n + m + 1, n),
        });
    }
    let diverged = transitions.iter().any(|t| !transition_finite(t));
    Ok(Trajectory { transitions, seed: 0, noise_scale: T::one(), diverged })
}
