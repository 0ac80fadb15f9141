//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::process::ExitCode;
use std::time::Instant;

use lqr_lstd::bounds::{
    beta_mixing_bound, contractive_requirement_rhs, feature_second_moment, lstd_requirement_lhs, lstd_requirement_lqr,
    lstd_requirement_target, required_trajectory_length, required_trajectory_length_contractive, small_ball_lqr,
    small_ball_requirement_rhs, MixingBound, SmallBall,
};
use lqr_lstd::estimators::{lspi_with_source, lstd, structural_error_bound, ExactQ, FeatureMatrices, LspiOptions};
use lqr_lstd::experiments::{
    diag_instance, initial_gain, initial_relative_errors, run_lspi_compare, run_synthetic_diag, select_random_instance,
    ExperimentConfig, ExperimentKind,
};
use lqr_lstd::lqr::{closed_loop, optimal_gain, stationary_covariance, value_matrix, LinearPolicy, LqrInstance, Objective};
use lqr_lstd::lyapunov::{default_rate, solve_dlyap, LyapunovForm, DEFAULT_HINF_GRID};
use lqr_lstd::matops::{diag, identity, smat, spectral_radius, svec, sym_dim, trace_inner};
use lqr_lstd::report::{aggregate, percentile};
use lqr_lstd::simulate::rollout_policy;
use lqr_lstd::Mat;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Mat {
    let g = gaussian(n, n, rng);
    (&g + g.transpose()) * 0.5
}

/// Gaussian matrix rescaled to the given spectral radius.
fn random_stable(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Mat {
    let g = gaussian(n, n, rng);
    let r = spectral_radius(&g);
    g * (radius / r)
}

fn half_identity_instance() -> (LqrInstance<f64>, LinearPolicy<f64>) {
    let n = 5;
    let q = identity::<f64>(n) * 0.1;
    let inst = LqrInstance::new(identity(n), identity(n), q.clone(), q, 0.9).unwrap();
    (inst, LinearPolicy::new(identity::<f64>(n) * -0.5))
}

fn c1_analytic() -> Outcome {
    let rhos = [0.1, 0.35, 0.5, 0.8, 0.95];
    let l = diag::<f64>(&rhos);
    let p = solve_dlyap(&l, &identity(5), LyapunovForm::Direct).map_err(|e| e.to_string())?;
    let closed = diag::<f64>(&rhos.map(|r| 1.0 / (1.0 - r * r)));
    let diag_err = (&p - &closed).abs().max();
    if diag_err > 1e-10 {
        return Err(format!("diagonal closed form off by {diag_err:.3e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut svec_err: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = (random_symmetric(6, &mut rng), random_symmetric(6, &mut rng));
        let (sa, sb) = (svec(&a).unwrap(), svec(&b).unwrap());
        let ip = trace_inner(&a, &b);
        svec_err = svec_err.max((sa.dot(&sb) - ip).abs() / (1.0 + ip.abs()));
        svec_err = svec_err.max((&smat(&sa) - &a).abs().max());
    }
    if svec_err > 1e-10 {
        return Err(format!("svec/smat identity off by {svec_err:.3e}"));
    }

    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = 2 + i % 6;
        let radius = rng.random_range(0.05..0.97);
        let l = random_stable(n, radius, &mut rng);
        let g = gaussian(n, n, &mut rng);
        let s = &g * g.transpose() + identity::<f64>(n);
        for form in [LyapunovForm::Direct, LyapunovForm::Transposed] {
            let p = solve_dlyap(&l, &s, form).map_err(|e| e.to_string())?;
            let res = match form {
                LyapunovForm::Direct => &l * &p * l.transpose() - &p + &s,
                LyapunovForm::Transposed => l.transpose() * &p * &l - &p + &s,
            };
            worst = worst.max(res.norm() / p.norm());
        }
    }
    if worst > 1e-9 {
        return Err(format!("worst relative Lyapunov residual {worst:.3e}"));
    }
    Ok(format!("closed form {diag_err:.1e}, svec {svec_err:.1e}, residual {worst:.1e}"))
}

fn c2_fourth_moment() -> Outcome {
    let n = 4;
    let samples = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_z: f64 = 0.0;
    for _ in 0..10 {
        let (a, b) = (random_symmetric(n, &mut rng), random_symmetric(n, &mut rng));
        let exact = 2.0 * trace_inner(&a, &b) + a.trace() * b.trace();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = (x.transpose() * &a * &x)[0] * (x.transpose() * &b * &x)[0];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / samples as f64;
        let var = (sum_sq / samples as f64 - mean * mean) * samples as f64 / (samples as f64 - 1.0);
        let se = (var / samples as f64).sqrt();
        let z = (mean - exact).abs() / se;
        worst_z = worst_z.max(z);
    }
    if worst_z > 4.0 {
        return Err(format!("worst deviation {worst_z:.2} standard errors"));
    }
    Ok(format!("worst deviation {worst_z:.2} standard errors over 10 pairs"))
}

fn c3_fixed_point() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let rho = [0.1, 0.5, 0.9][seed as usize % 3];
        let (inst, pol) = diag_instance(rho, 0.9, 0.1).map_err(|e| e.to_string())?;
        let traj = rollout_policy(&inst, &pol, 200 + 10 * seed as usize, seed, 1.0).map_err(|e| e.to_string())?;
        let feats = FeatureMatrices::from_trajectory(&traj, inst.eta()).map_err(|e| e.to_string())?;
        let est = lstd(&traj, inst.gamma, inst.eta()).map_err(|e| e.to_string())?;
        if est.effective_rank != sym_dim(5) {
            return Err(format!("seed {seed}: rank {} below full", est.effective_rank));
        }
        let (a, b) = feats.normal_equations(inst.gamma);
        let rel = (a * &est.w_hat - &b).norm() / (1.0 + b.norm());
        worst = worst.max(rel);
    }
    if worst > 1e-8 {
        return Err(format!("worst scaled residual {worst:.3e}"));
    }
    Ok(format!("worst scaled residual {worst:.2e} on 50 trajectories"))
}

fn c4_structural() -> Outcome {
    let (inst, pol) = half_identity_instance();
    let l = closed_loop(&inst, &pol).map_err(|e| e.to_string())?;
    let p = value_matrix(&inst, &pol).map_err(|e| e.to_string())?.p;
    let mut tightest: f64 = 0.0;
    for seed in 0..50u64 {
        let traj = rollout_policy(&inst, &pol, 500, 1000 + seed, 1.0).map_err(|e| e.to_string())?;
        let est = lstd(&traj, inst.gamma, inst.eta()).map_err(|e| e.to_string())?;
        let err = (&est.p_hat - &p).norm();
        let bound = structural_error_bound(&traj, &l, &p, inst.eta()).map_err(|e| e.to_string())?;
        if err > bound {
            return Err(format!("seed {seed}: error {err:.6e} exceeds bound {bound:.6e}"));
        }
        tightest = tightest.max(err / bound);
    }
    Ok(format!("holds on 50 trajectories, largest error/bound {tightest:.3}"))
}

fn c5_rate() -> Outcome {
    let (inst, pol) = half_identity_instance();
    let p = value_matrix(&inst, &pol).map_err(|e| e.to_string())?.p;
    let median_at = |len: usize| -> Result<f64, String> {
        let errs = (0..50u64)
            .map(|seed| {
                let traj = rollout_policy(&inst, &pol, len, 5000 + seed, 1.0).map_err(|e| e.to_string())?;
                let est = lstd(&traj, inst.gamma, inst.eta()).map_err(|e| e.to_string())?;
                Ok((est.p_hat - &p).norm() / p.norm())
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(percentile(&errs, 50.0))
    };
    let (m2, m8) = (median_at(2000)?, median_at(8000)?);
    let ratio = m8 / m2;
    let msg = format!("median {m2:.4e} at 2000, {m8:.4e} at 8000, ratio {ratio:.3}");
    if ratio <= 0.7 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_ordering() -> Outcome {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::SyntheticDiag);
    cfg.prefixes = vec![1000];
    let rows = aggregate(&run_synthetic_diag(&cfg).map_err(|e| e.to_string())?);
    let medians: Vec<(String, f64)> = rows.iter().filter(|r| r.timesteps == 1000).map(|r| (r.param.clone(), r.median)).collect();
    let msg = medians.iter().map(|(p, m)| format!("rho {p}: {m:.4e}")).collect::<Vec<_>>().join(", ");
    if medians.len() == 3 && medians.windows(2).all(|w| w[0].1 < w[1].1) {
        Ok(msg)
    } else {
        Err(format!("not strictly increasing: {msg}"))
    }
}

fn c7_conditioning() -> Outcome {
    let k = |rho| select_random_instance(rho, 200, 0).map(|s| s.median_kappa).map_err(|e| e.to_string());
    let (k1, k5, k9) = (k(0.1)?, k(0.5)?, k(0.9)?);
    let msg = format!("median kappa {k1:.2} / {k5:.2} / {k9:.3e}");
    if (3.0..=15.0).contains(&k1) && (15.0..=70.0).contains(&k5) && k9 > 1e4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_initial_errors() -> Outcome {
    let cfg = ExperimentConfig::defaults(ExperimentKind::LspiCompare);
    let errs = initial_relative_errors(&cfg).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (obj, err) in errs {
        let target = match obj {
            Objective::Discounted => 6.603,
            Objective::Average => 4.778,
        };
        ok &= ((err - target) / target).abs() <= 0.02;
        parts.push(format!("{} {err:.4} (target {target})", obj.name()));
    }
    let msg = parts.join(", ");
    if ok && parts.len() == 2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_lspi_vs_nominal() -> Outcome {
    let cfg = ExperimentConfig::defaults(ExperimentKind::LspiCompare);
    let rows = aggregate(&run_lspi_compare(&cfg).map_err(|e| e.to_string())?);
    let mut parts = Vec::new();
    let mut ok = true;
    for obj in &cfg.objectives {
        let find = |method: &str, t: u64| {
            rows.iter()
                .find(|r| r.method == method && r.param == obj.name() && r.timesteps == t)
                .ok_or_else(|| format!("missing {method} row at {t} for {}", obj.name()))
        };
        let nominal = find("nominal", 250)?;
        let lspi = find("lspi", 3000)?;
        let stab = nominal.frequency_stable >= lspi.frequency_stable;
        let med = nominal.median <= lspi.median;
        ok &= stab && med;
        parts.push(format!(
            "{}: stable {:.2} vs {:.2} [{}], median {:.4} vs {:.4} [{}]",
            obj.name(),
            nominal.frequency_stable,
            lspi.frequency_stable,
            if stab { "ok" } else { "violated" },
            nominal.median,
            lspi.median,
            if med { "ok" } else { "violated" },
        ));
    }
    let msg = format!("nominal@250 vs lspi@3000; {}", parts.join("; "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct GridPoint {
    mixing: MixingBound<f64>,
    p_inf: Mat,
    eta: f64,
}

fn grid_point(rho: f64) -> Result<GridPoint, String> {
    let (inst, pol) = diag_instance(rho, 0.9, 0.1).map_err(|e| e.to_string())?;
    let l = closed_loop(&inst, &pol).map_err(|e| e.to_string())?;
    let mixing = beta_mixing_bound(&l, default_rate(&l), DEFAULT_HINF_GRID).map_err(|e| e.to_string())?;
    let p_inf = stationary_covariance(&l).map_err(|e| e.to_string())?;
    Ok(GridPoint { mixing, p_inf, eta: inst.eta() })
}

fn minimal(n: u64, holds: impl Fn(u64) -> bool) -> bool {
    holds(n) && (n == 1 || !holds(n - 1))
}

fn c10_bounds() -> Outcome {
    let rhos = [0.1, 0.5, 0.9];
    let deltas = [0.1, 0.01];
    let qs = [0.1, 0.3];
    let points = rhos.iter().map(|&r| grid_point(r)).collect::<Result<Vec<_>, _>>()?;
    let mut checks = 0;
    // small[rho][delta][q][tau_scale]
    let mut small = [[[[0u64; 2]; 2]; 2]; 3];
    let mut contractive = [[0u64; 2]; 3];
    let mut lstd_n = [[0u64; 2]; 3];
    for (i, pt) in points.iter().enumerate() {
        let n = pt.p_inf.nrows();
        let base = small_ball_lqr(&pt.p_inf).map_err(|e| e.to_string())?;
        let moment = feature_second_moment(&pt.p_inf, pt.eta, n);
        for (j, &delta) in deltas.iter().enumerate() {
            for (k, &q) in qs.iter().enumerate() {
                for (t, scale) in [1.0, 2.0].into_iter().enumerate() {
                    let sb = SmallBall { tau: base.tau * scale, q };
                    let req = required_trajectory_length(&sb, moment, &pt.mixing, delta).map_err(|e| e.to_string())?;
                    if !minimal(req, |m| m as f64 >= small_ball_requirement_rhs(m, &sb, moment, &pt.mixing, delta)) {
                        return Err(format!("small-ball N={req} not minimal at rho {}, delta {delta}, q {q}", rhos[i]));
                    }
                    small[i][j][k][t] = req;
                    checks += 1;
                }
            }
            let c = required_trajectory_length_contractive(1.0, 2.0, 1.5, n, &pt.mixing, delta).map_err(|e| e.to_string())?;
            if !minimal(c.n, |m| m as f64 >= contractive_requirement_rhs(m, 1.0, 2.0, 1.5, n, &pt.mixing, delta)) {
                return Err(format!("contractive N={} not minimal at rho {}, delta {delta}", c.n, rhos[i]));
            }
            contractive[i][j] = c.n;
            let l = lstd_requirement_lqr(&pt.p_inf, pt.eta, &pt.mixing, delta, 1.0).map_err(|e| e.to_string())?;
            let target = lstd_requirement_target(&pt.p_inf, pt.eta, pt.mixing.rate, 1.0).map_err(|e| e.to_string())?;
            let g = pt.mixing.gamma_tilde();
            if !minimal(l, |m| lstd_requirement_lhs(m, g, delta) >= target) {
                return Err(format!("lstd N={l} not minimal at rho {}, delta {delta}", rhos[i]));
            }
            lstd_n[i][j] = l;
            checks += 2;
        }
    }
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..2 {
                for t in 0..2 {
                    let v = small[i][j][k][t];
                    let rho_ok = i == 0 || small[i - 1][j][k][t] <= v;
                    let delta_ok = j == 0 || small[i][j - 1][k][t] <= v;
                    let q_ok = k == 0 || small[i][j][k - 1][t] >= v;
                    let tau_ok = t == 0 || small[i][j][k][t - 1] >= v;
                    if !(rho_ok && delta_ok && q_ok && tau_ok) {
                        return Err(format!("small-ball requirement not monotone at grid index ({i},{j},{k},{t})"));
                    }
                }
            }
            let rho_ok = i == 0 || (contractive[i - 1][j] <= contractive[i][j] && lstd_n[i - 1][j] <= lstd_n[i][j]);
            let delta_ok = j == 0 || (contractive[i][j - 1] <= contractive[i][j] && lstd_n[i][j - 1] <= lstd_n[i][j]);
            if !(rho_ok && delta_ok) {
                return Err(format!("requirement not monotone at grid index ({i},{j})"));
            }
        }
    }
    Ok(format!("{checks} minimality checks on 12 grid points, monotone in rho, delta, tau, q"))
}

fn exact_lspi_gap(inst: &LqrInstance<f64>, k0: &Mat, objective: Objective) -> Result<f64, String> {
    let source = ExactQ { instance: inst.clone(), objective };
    let out = lspi_with_source(&source, k0, inst, objective, LspiOptions::default()).map_err(|e| e.to_string())?;
    let k = out.final_gain.ok_or("exact policy iteration lost stability")?;
    let k_star = optimal_gain(inst, objective).map_err(|e| e.to_string())?;
    Ok((k - k_star).abs().max())
}

fn c11_exact_lspi() -> Outcome {
    let mut worst: f64 = 0.0;
    let bench = LqrInstance::coupled_benchmark(0.98);
    let k0 = initial_gain(&bench, 0.6).map_err(|e| e.to_string())?;
    for obj in [Objective::Discounted, Objective::Average] {
        worst = worst.max(exact_lspi_gap(&bench, &k0, obj)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for i in 0..10 {
        let (n, m) = (3 + i % 3, 1 + i % 3);
        let a = random_stable(n, rng.random_range(0.3..0.95), &mut rng);
        let b = gaussian(n, m, &mut rng);
        let inst = LqrInstance::new(a, b, identity(n), identity(m), 0.95).map_err(|e| e.to_string())?;
        let k0 = DMatrix::zeros(m, n);
        for obj in [Objective::Discounted, Objective::Average] {
            worst = worst.max(exact_lspi_gap(&inst, &k0, obj)?);
        }
    }
    if worst > 1e-6 {
        return Err(format!("largest gain gap {worst:.3e}"));
    }
    Ok(format!("largest gain gap to the Riccati solution {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("analytic Lyapunov and svec oracles", c1_analytic),
        ("Gaussian fourth moment", c2_fourth_moment),
        ("LSTD fixed point", c3_fixed_point),
        ("structural error bound", c4_structural),
        ("consistency rate", c5_rate),
        ("error ordering across rho", c6_ordering),
        ("random-instance conditioning", c7_conditioning),
        ("initial gain relative errors", c8_initial_errors),
        ("LSPI vs nominal", c9_lspi_vs_nominal),
        ("bound minimality and monotonicity", c10_bounds),
        ("exact-oracle LSPI", c11_exact_lspi),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {name}: {msg} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
