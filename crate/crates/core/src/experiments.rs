//! Experiment harness: synthetic conditioning runs, LSPI against the nominal
//! controller, and theory reports.
//!
//! Trial `i` uses seed `base_seed + i` unless an explicit seed list is given.
//! Trials run in parallel; records are assembled in trial order so the output
//! does not depend on scheduling.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, condition_number, BoundConstants, BoundReport};
use crate::estimators::{lspi, lstd, nominal_controller, ols_sysid, LspiOptions};
use crate::lqr::{
    closed_loop, cost, optimal_gain, relative_cost_error, stationary_covariance, value_matrix, LinearPolicy, LqrInstance,
    Objective, STABILITY_MARGIN,
};
use crate::matops::{diag, identity, spectral_radius};
use crate::report::TrialRecord;
use crate::simulate::{collect_rollouts, rollout_policy};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const STATE_DIM: usize = 5;
/// The fast closed-loop mode of the diagonal family.
pub const FAST_MODE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SyntheticDiag,
    SyntheticRandom,
    LspiCompare,
    Bounds,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SyntheticDiag => "synthetic-diag",
            ExperimentKind::SyntheticRandom => "synthetic-random",
            ExperimentKind::LspiCompare => "lspi-compare",
            ExperimentKind::Bounds => "bounds",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: ExperimentKind,
    pub base_seed: u64,
    pub trials: usize,
    /// Overrides `base_seed`/`trials` when present.
    pub seeds: Option<Vec<u64>>,
    /// Closed-loop radius per synthetic instance.
    pub rhos: Vec<f64>,
    /// Trajectory prefixes at which LSTD is evaluated.
    pub prefixes: Vec<usize>,
    pub gamma: f64,
    /// `Q = R = cost_scale * I` for the synthetic instances.
    pub cost_scale: f64,
    /// Random instances drawn per radius.
    pub pool_size: usize,
    /// Transition budgets for the LSPI comparison. A budget that is not a multiple
    /// of `rollout_length` truncates its last rollout.
    pub timesteps: Vec<usize>,
    pub rollout_length: usize,
    pub objectives: Vec<Objective>,
    /// Initial gain places `A + B K0` at this multiple of the identity.
    pub k0_closed_loop: f64,
    pub lspi_tol: f64,
    pub lspi_max_iter: usize,
    pub delta: f64,
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let lspi = experiment == ExperimentKind::LspiCompare;
        Self {
            version: CONFIG_VERSION,
            experiment,
            base_seed: 0,
            trials: 20,
            seeds: None,
            rhos: vec![0.1, 0.5, 0.9],
            prefixes: (1..=10).map(|i| 100 * i).collect(),
            gamma: if lspi { 0.98 } else { 0.9 },
            cost_scale: 0.1,
            pool_size: 200,
            timesteps: vec![250, 500, 1000, 2000, 3000],
            rollout_length: 20,
            objectives: vec![Objective::Discounted, Objective::Average],
            k0_closed_loop: 0.6,
            lspi_tol: crate::estimators::LSPI_TOL,
            lspi_max_iter: crate::estimators::LSPI_MAX_ITER,
            delta: 0.1,
            output_path: None,
        }
    }

    pub fn paper_scale(mut self) -> Self {
        self.trials = 100;
        self.pool_size = 1000;
        self
    }

    /// Defaults for `experiment` overridden by the keys present in `json`.
    pub fn from_json_overrides(experiment: ExperimentKind, json: &str, paper_scale: bool) -> Result<Self> {
        let mut base = Self::defaults(experiment);
        if paper_scale {
            base = base.paper_scale();
        }
        let mut value = serde_json::to_value(&base)?;
        let overrides: serde_json::Value =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let serde_json::Value::Object(map) = overrides else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        if let Some(v) = map.get("version") {
            if v.as_u64() != Some(CONFIG_VERSION as u64) {
                return Err(Error::Config(format!("unsupported config version {v}, expected {CONFIG_VERSION}")));
            }
        }
        if let Some(v) = map.get("experiment") {
            if v.as_str() != Some(experiment.name()) {
                return Err(Error::Config(format!("config is for experiment {v}, not {experiment}")));
            }
        }
        let target = value.as_object_mut().expect("config serializes to an object");
        for (k, v) in map {
            target.insert(k, v);
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        match &self.seeds {
            Some(s) if s.is_empty() => return bad("seed list is empty".into()),
            None if self.trials == 0 => return bad("trials must be at least 1".into()),
            _ => {}
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        match self.experiment {
            ExperimentKind::SyntheticDiag | ExperimentKind::SyntheticRandom | ExperimentKind::Bounds => {
                if self.rhos.is_empty() || self.rhos.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
                    return bad("rhos must be a nonempty list in (0, 1)".into());
                }
                if self.prefixes.is_empty() || self.prefixes[0] == 0 || self.prefixes.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("prefixes must be positive and strictly increasing".into());
                }
                if !(self.cost_scale > 0.0) {
                    return bad("cost_scale must be positive".into());
                }
                if self.experiment == ExperimentKind::SyntheticRandom && self.pool_size == 0 {
                    return bad("pool_size must be at least 1".into());
                }
            }
            ExperimentKind::LspiCompare => {
                if self.rollout_length == 0 {
                    return bad("rollout_length must be at least 1".into());
                }
                if self.timesteps.is_empty()
                    || self.timesteps.windows(2).any(|w| w[0] >= w[1])
                    || self.timesteps[0] == 0
                {
                    return bad("timesteps must be positive and strictly increasing".into());
                }
                if self.objectives.is_empty() {
                    return bad("objectives must not be empty".into());
                }
                if self.lspi_max_iter == 0 || !(self.lspi_tol > 0.0) {
                    return bad("lspi_tol must be positive and lspi_max_iter at least 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.trials as u64).map(|i| self.base_seed.wrapping_add(i)).collect(),
        }
    }
}

fn fmt_param(v: f64) -> String {
    format!("{v}")
}

/// `A = B = I_5`, `Q = R = c I_5`, `K = diag(-(1-rho), ..., -(1-0.01))`, so
/// `L = diag(rho, rho, rho, rho, 0.01)`.
pub fn diag_instance(rho: f64, gamma: f64, cost_scale: f64) -> Result<(LqrInstance<f64>, LinearPolicy<f64>)> {
    let n = STATE_DIM;
    let inst = LqrInstance::new(identity(n), identity(n), identity::<f64>(n) * cost_scale, identity::<f64>(n) * cost_scale, gamma)?;
    let mut gains = vec![-(1.0 - rho); n];
    gains[n - 1] = -(1.0 - FAST_MODE);
    Ok((inst, LinearPolicy::new(diag(&gains))))
}

/// Upper-triangular `A` with `rho` on the diagonal and `clip(N(0,1), -1, 1)` above it.
pub fn random_upper_triangular(rho: f64, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = rho;
        for j in i + 1..n {
            let z: f64 = StandardNormal.sample(rng);
            a[(i, j)] = z.clamp(-1.0, 1.0);
        }
    }
    a
}

/// Outcome of drawing a pool of random instances for one radius.
#[derive(Debug, Clone, Serialize)]
pub struct RandomInstanceSelection {
    pub rho: f64,
    pub draws: usize,
    pub discarded: usize,
    /// `kappa(P_inf(A))` of every kept draw, sorted.
    pub kappas: Vec<f64>,
    pub median_kappa: f64,
    #[serde(skip)]
    pub a: DMatrix<f64>,
}

impl RandomInstanceSelection {
    pub fn discard_rate(&self) -> f64 {
        self.discarded as f64 / self.draws as f64
    }
}

/// Draws `pool` instances, drops unstable ones, and keeps the median-`kappa` draw
/// (the lower median for an even count).
///
/// The pool for a given radius depends only on `(seed, rho)`.
pub fn select_random_instance(rho: f64, pool: usize, seed: u64) -> Result<RandomInstanceSelection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rho.to_bits());
    let mut kept: Vec<(f64, DMatrix<f64>)> = Vec::with_capacity(pool);
    let mut discarded = 0;
    for _ in 0..pool {
        let a = random_upper_triangular(rho, STATE_DIM, &mut rng);
        if spectral_radius(&a) >= 1.0 - STABILITY_MARGIN {
            discarded += 1;
            continue;
        }
        match stationary_covariance(&a).and_then(|p| condition_number(&p)) {
            Ok(k) if k.is_finite() => kept.push((k, a)),
            Ok(_) | Err(Error::Unstable(_)) | Err(Error::NotPD) => discarded += 1,
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::NoStableInstance(pool));
    }
    kept.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mid = (kept.len() - 1) / 2;
    Ok(RandomInstanceSelection {
        rho,
        draws: pool,
        discarded,
        median_kappa: kept[mid].0,
        kappas: kept.iter().map(|k| k.0).collect(),
        a: kept[mid].1.clone(),
    })
}

struct PrefixJob<'a> {
    experiment: &'a str,
    param: String,
    inst: LqrInstance<f64>,
    pol: LinearPolicy<f64>,
}

/// LSTD relative errors on the first `N_p` transitions of one trajectory per seed.
fn prefix_protocol(jobs: &[PrefixJob<'_>], cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    let seeds = cfg.trial_seeds();
    let longest = *cfg.prefixes.last().expect("validated nonempty");
    let truths = jobs
        .iter()
        .map(|j| value_matrix(&j.inst, &j.pol).map(|v| v.p))
        .collect::<Result<Vec<_>>>()?;
    let per_trial = seeds
        .par_iter()
        .enumerate()
        .map(|(trial_id, &seed)| {
            let mut out = Vec::new();
            for (job, p) in jobs.iter().zip(&truths) {
                let traj = rollout_policy(&job.inst, &job.pol, longest, seed, 1.0)?;
                for &np in &cfg.prefixes {
                    let value = match lstd(&traj.prefix(np), job.inst.gamma, job.inst.eta()) {
                        Ok(est) => (est.p_hat - p).norm() / p.norm(),
                        Err(Error::NonFinite) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    out.push(TrialRecord {
                        experiment: job.experiment.into(),
                        method: "lstd".into(),
                        param: job.param.clone(),
                        timesteps: np as u64,
                        seed,
                        trial_id: trial_id as u64,
                        metric: "rel_error".into(),
                        value,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn run_synthetic_diag(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let jobs = cfg
        .rhos
        .iter()
        .map(|&rho| {
            let (inst, pol) = diag_instance(rho, cfg.gamma, cfg.cost_scale)?;
            Ok(PrefixJob { experiment: ExperimentKind::SyntheticDiag.name(), param: fmt_param(rho), inst, pol })
        })
        .collect::<Result<Vec<_>>>()?;
    prefix_protocol(&jobs, cfg)
}

pub fn run_synthetic_random(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let name = ExperimentKind::SyntheticRandom.name();
    let n = STATE_DIM;
    let mut instance_records = Vec::new();
    let mut jobs = Vec::new();
    for &rho in &cfg.rhos {
        let sel = select_random_instance(rho, cfg.pool_size, cfg.base_seed)?;
        for (metric, value) in [("kappa", sel.median_kappa), ("discard_rate", sel.discard_rate())] {
            instance_records.push(TrialRecord {
                experiment: name.into(),
                method: "instance".into(),
                param: fmt_param(rho),
                timesteps: 0,
                seed: cfg.base_seed,
                trial_id: 0,
                metric: metric.into(),
                value,
            });
        }
        let q = identity::<f64>(n) * cfg.cost_scale;
        let inst = LqrInstance::new(sel.a, DMatrix::zeros(n, n), q.clone(), q, cfg.gamma)?;
        let pol = LinearPolicy::zero(&inst);
        jobs.push(PrefixJob { experiment: name, param: fmt_param(rho), inst, pol });
    }
    let mut records = prefix_protocol(&jobs, cfg)?;
    instance_records.append(&mut records);
    Ok(instance_records)
}

/// `K0` with `A + B K0 = c I`.
pub fn initial_gain(inst: &LqrInstance<f64>, closed_loop_scale: f64) -> Result<DMatrix<f64>> {
    let target = identity::<f64>(inst.state_dim()) * closed_loop_scale - &inst.a;
    if !inst.b.is_square() {
        return Err(Error::Config("initial gain needs a square input matrix".into()));
    }
    inst.b.clone().lu().solve(&target).ok_or_else(|| Error::Config("input matrix is singular".into()))
}

/// Relative cost error of `K0` on the benchmark, per objective.
pub fn initial_relative_errors(cfg: &ExperimentConfig) -> Result<Vec<(Objective, f64)>> {
    let inst = LqrInstance::coupled_benchmark(cfg.gamma);
    let k0 = initial_gain(&inst, cfg.k0_closed_loop)?;
    cfg.objectives
        .iter()
        .map(|&obj| {
            let j_star = cost(&inst, &LinearPolicy::new(optimal_gain(&inst, obj)?), obj)?;
            Ok((obj, relative_cost_error(&inst, &k0, j_star, obj)?))
        })
        .collect()
}

pub fn run_lspi_compare(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let name = ExperimentKind::LspiCompare.name();
    let inst = LqrInstance::coupled_benchmark(cfg.gamma);
    let k0 = initial_gain(&inst, cfg.k0_closed_loop)?;
    let optimal = cfg
        .objectives
        .iter()
        .map(|&obj| Ok((obj, cost(&inst, &LinearPolicy::new(optimal_gain(&inst, obj)?), obj)?)))
        .collect::<Result<Vec<_>>>()?;
    let opts = LspiOptions { tol: cfg.lspi_tol, max_iter: cfg.lspi_max_iter };
    let longest = *cfg.timesteps.last().expect("validated nonempty");
    let seeds = cfg.trial_seeds();
    let per_trial = seeds
        .par_iter()
        .enumerate()
        .map(|(trial_id, &seed)| {
            let all = collect_rollouts(&inst, longest.div_ceil(cfg.rollout_length), cfg.rollout_length, seed)?;
            let mut out = Vec::new();
            for &(obj, j_star) in &optimal {
                for &budget in &cfg.timesteps {
                    let data = &all[..budget];
                    let lspi_gain = lspi(data, &k0, &inst, obj, opts)?.final_gain;
                    let nominal_gain = ols_sysid(data)
                        .and_then(|fit| nominal_controller(&fit.a_hat, &fit.b_hat, &inst.q, &inst.r, inst.gamma, obj))
                        .ok();
                    for (method, gain) in [("lspi", lspi_gain), ("nominal", nominal_gain)] {
                        let rel = match &gain {
                            Some(k) => relative_cost_error(&inst, k, j_star, obj)?,
                            None => f64::INFINITY,
                        };
                        for (metric, value) in [("rel_error", rel), ("stable", if rel.is_finite() { 1.0 } else { 0.0 })] {
                            out.push(TrialRecord {
                                experiment: name.into(),
                                method: method.into(),
                                param: obj.name().into(),
                                timesteps: budget as u64,
                                seed,
                                trial_id: trial_id as u64,
                                metric: metric.into(),
                                value,
                            });
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Theory report for the diagonal instance at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBoundReport {
    pub rho: f64,
    pub report: BoundReport,
}

pub fn bound_report_cmd(cfg: &ExperimentConfig) -> Result<Vec<InstanceBoundReport>> {
    cfg.validate()?;
    let sizes: Vec<u64> = cfg.prefixes.iter().map(|&p| p as u64).collect();
    cfg.rhos
        .iter()
        .map(|&rho| {
            let (inst, pol) = diag_instance(rho, cfg.gamma, cfg.cost_scale)?;
            closed_loop(&inst, &pol)?;
            let report = bound_report(&inst, &pol, cfg.delta, &sizes, BoundConstants::default())?;
            Ok(InstanceBoundReport { rho, report })
        })
        .collect()
}

/// Flattens theory reports into trial records (seed and trial id are zero).
pub fn bound_records(reports: &[InstanceBoundReport]) -> Vec<TrialRecord> {
    let mut out = Vec::new();
    let mut push = |param: f64, timesteps: u64, metric: &str, value: f64| {
        out.push(TrialRecord {
            experiment: ExperimentKind::Bounds.name().into(),
            method: "theory".into(),
            param: fmt_param(param),
            timesteps,
            seed: 0,
            trial_id: 0,
            metric: metric.into(),
            value,
        })
    };
    for r in reports {
        let rep = &r.report;
        push(r.rho, 0, "kappa", rep.kappa);
        push(r.rho, 0, "gamma_tilde", rep.gamma_tilde);
        push(r.rho, 0, "mixing_rate", rep.mixing.rate);
        push(r.rho, 0, "tau", rep.smallball.tau);
        push(r.rho, 0, "small_ball_q", rep.smallball.q);
        push(r.rho, 0, "second_moment", rep.second_moment);
        push(r.rho, 0, "required_n", rep.required_n as f64);
        for p in &rep.predictions {
            push(r.rho, p.samples, "predicted_rel_error", p.predicted_rel_error);
        }
    }
    out
}
