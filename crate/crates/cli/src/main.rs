//! Experiment runner for LSTD and LSPI on linear quadratic regulators.
//!
//! Exit codes: 0 success, 2 configuration error, 3 experiment failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lqr_lstd::experiments::{
    bound_records, bound_report_cmd, initial_relative_errors, run_lspi_compare, run_synthetic_diag, run_synthetic_random,
    select_random_instance, ExperimentConfig, ExperimentKind,
};
use lqr_lstd::report::{aggregate, emit_report, Format};
use lqr_lstd::Error;

#[derive(Parser, Debug)]
#[command(name = "lqr-lstd", version, about = "LSTD / LSPI experiments on linear quadratic regulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// LSTD error against trajectory length on diagonal closed loops.
    SyntheticDiag(Common),
    /// LSTD error on median-conditioned random upper-triangular systems.
    SyntheticRandom(Common),
    /// LSPI against the certainty-equivalent controller on the coupled benchmark.
    LspiCompare(Common),
    /// Theory constants and sample requirements for the diagonal closed loops.
    Bounds(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config; keys override the defaults of the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output table; the aggregate goes to <out>.agg.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// 100 trials and a pool of 1000 random instances.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

enum Failure {
    Config(String),
    Experiment(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Experiment(other.to_string()),
        }
    }
}

fn load_config(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, Failure> {
    let json = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?,
        None => "{}".to_string(),
    };
    let mut cfg = ExperimentConfig::from_json_overrides(kind, &json, args.paper_scale)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
        cfg.seeds = None;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
        cfg.seeds = None;
    }
    if let Some(out) = &args.out {
        cfg.output_path = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Experiment(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Experiment(format!("cannot write {}: {e}", path.display())))
}

fn run(kind: ExperimentKind, args: &Common) -> Result<(), Failure> {
    let cfg = load_config(kind, args)?;
    let format = match args.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let out = cfg.output_path.clone().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(format!("{kind}.{ext}")));

    let records = match kind {
        ExperimentKind::SyntheticDiag => run_synthetic_diag(&cfg)?,
        ExperimentKind::SyntheticRandom => {
            for &rho in &cfg.rhos {
                let sel = select_random_instance(rho, cfg.pool_size, cfg.base_seed)?;
                eprintln!(
                    "rho {rho}: median kappa {:.4e} over {} draws ({} discarded)",
                    sel.median_kappa, sel.draws, sel.discarded
                );
            }
            run_synthetic_random(&cfg)?
        }
        ExperimentKind::LspiCompare => {
            for (obj, err) in initial_relative_errors(&cfg)? {
                eprintln!("K0 relative error ({}): {err:.4}", obj.name());
            }
            run_lspi_compare(&cfg)?
        }
        ExperimentKind::Bounds => {
            let reports = bound_report_cmd(&cfg)?;
            write_json(&sidecar(&out, ".reports.json"), &reports)?;
            bound_records(&reports)
        }
    };
    let agg_path = emit_report(&records, &out, format)?;
    write_json(&sidecar(&out, ".config.json"), &cfg)?;

    println!("wrote {} records to {}", records.len(), out.display());
    let rows = aggregate(&records);
    if !rows.is_empty() {
        println!("aggregate in {}", agg_path.display());
        println!("{:<10} {:<12} {:>9} {:>12} {:>12} {:>12} {:>8}", "method", "param", "timesteps", "p25", "median", "p75", "stable");
        for r in rows {
            println!(
                "{:<10} {:<12} {:>9} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.2}",
                r.method, r.param, r.timesteps, r.p25, r.median, r.p75, r.frequency_stable
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::SyntheticDiag(a) => (ExperimentKind::SyntheticDiag, a),
        Command::SyntheticRandom(a) => (ExperimentKind::SyntheticRandom, a),
        Command::LspiCompare(a) => (ExperimentKind::LspiCompare, a),
        Command::Bounds(a) => (ExperimentKind::Bounds, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Experiment(msg)) => {
            eprintln!("experiment failed: {msg}");
            ExitCode::from(3)
        }
    }
}
