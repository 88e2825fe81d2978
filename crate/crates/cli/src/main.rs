use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zoopt_core::config::{ExperimentConfig, FlatConfig};
use zoopt_core::experiment::{
    prop1, run_attack, run_experiment, run_sweep, AttackRequest, AttackScope,
};
use zoopt_core::problems::{AttackMode, DEFAULT_LAMBDA};
use zoopt_core::validate::{run_suite, Suite, ValidateOptions};
use zoopt_core::estimators::MU_FLOOR;
use zoopt_core::{Algorithm, Result, ZoError};

const PROPERTY_FAIL: u8 = 1;

#[derive(Parser)]
#[command(name = "zoopt", version, about = "Zeroth-order optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run `repeat` seeded runs from a config file.
    Run { config: PathBuf },
    /// Run a grid of runs described by `sweep.*` keys.
    Sweep { config: PathBuf },
    /// Euclidean vs weighted projection on the linear counterexample.
    Prop1 {
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Property suites: smoothing, estimators, geometry, reductions, all.
    Validate {
        suite: String,
        #[arg(long, default_value_t = 2019)]
        seed: u64,
        /// Floor on the smoothing radius used by the probes.
        #[arg(long, default_value_t = MU_FLOOR)]
        mu_floor: f64,
    },
    /// Black-box attack on the bundled victim classifier.
    Attack {
        #[arg(long, value_parser = ["per-image", "universal"])]
        mode: String,
        /// Images per run; defaults to 1 per-image and 10 universal.
        #[arg(long)]
        m: Option<usize>,
        /// Comma-separated optimizer names.
        #[arg(long, value_delimiter = ',', required = true)]
        opt: Vec<String>,
        #[arg(long)]
        budget: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/attack")]
        out: PathBuf,
        /// Force one formulation for every optimizer: constrained or unconstrained.
        #[arg(long)]
        formulation: Option<String>,
        /// Comma-separated base step sizes searched per optimizer; defaults to
        /// 0.002,0.005,0.01,0.02,0.05,0.1.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run { config } => cmd_run(&config),
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Prop1 { iterations, alpha } => cmd_prop1(iterations, alpha),
        Command::Validate {
            suite,
            seed,
            mu_floor,
        } => cmd_validate(&suite, ValidateOptions { seed, mu_floor }),
        Command::Attack {
            mode,
            m,
            opt,
            budget,
            seed,
            out,
            formulation,
            alpha,
            lambda,
            threads,
        } => {
            let scope = AttackScope::parse(&mode)
                .ok_or_else(|| ZoError::config("mode", format!("unknown mode `{mode}`")))?;
            let optimizers = opt
                .iter()
                .map(|name| {
                    Algorithm::parse(name.trim())
                        .ok_or_else(|| ZoError::config("opt", format!("unknown optimizer `{name}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut req = AttackRequest::new(scope, optimizers, budget, seed, out);
            if let Some(m) = m {
                req.m = m;
            }
            if let Some(f) = formulation {
                req.formulation = Some(AttackMode::parse(&f).ok_or_else(|| {
                    ZoError::config("formulation", format!("unknown formulation `{f}`"))
                })?);
            }
            if !alpha.is_empty() {
                req.alphas = alpha;
            }
            req.lambda = lambda;
            req.threads = threads;
            cmd_attack(&req)
        }
    }
}

fn numeric_abort(what: &str) -> ZoError {
    ZoError::numeric(format!("{what} aborted on a non-finite value; partial traces were written"))
}

fn cmd_run(path: &std::path::Path) -> Result<u8> {
    let cfg = ExperimentConfig::load(path)?;
    let report = run_experiment(&cfg)?;
    for line in &report.lines {
        println!(
            "{} seed={} iterations={} queries={} final_loss={}",
            line.stem,
            line.seed,
            line.iterations,
            line.total_queries,
            line.final_loss.map_or("none".into(), |v| format!("{v:.6e}"))
        );
        if let Some(msg) = &line.aborted {
            eprintln!("{}: {msg}", line.stem);
        }
    }
    if report.any_aborted() {
        return Err(numeric_abort("run"));
    }
    Ok(0)
}

fn cmd_sweep(path: &std::path::Path) -> Result<u8> {
    let flat = FlatConfig::load(path)?;
    let report = run_sweep(&flat)?;
    print!("{}", report.to_text());
    if report.any_aborted() {
        return Err(numeric_abort("sweep"));
    }
    Ok(0)
}

fn cmd_prop1(iterations: usize, alpha: f64) -> Result<u8> {
    let report = prop1(iterations, alpha)?;
    println!(
        "euclidean: final iterate {:?} after {} iterations (max deviation {:.3e})",
        report.euclidean_final.as_slice(),
        report.iterations,
        report.euclidean_max_deviation
    );
    println!(
        "mahalanobis: first iterate {:?}, final iterate {:?}",
        report.mahalanobis_first.as_slice(),
        report.mahalanobis_final.as_slice()
    );
    println!("vi witness: {}", report.vi_witness);
    for c in &report.checks {
        println!("{c}");
    }
    Ok(if report.passed() { 0 } else { PROPERTY_FAIL })
}

fn cmd_validate(suite: &str, opts: ValidateOptions) -> Result<u8> {
    let suite = Suite::parse(suite).ok_or_else(|| {
        ZoError::config(
            "suite",
            format!("unknown suite `{suite}` (expected smoothing, estimators, geometry, reductions or all)"),
        )
    })?;
    if !(opts.mu_floor > 0.0 && opts.mu_floor.is_finite()) {
        return Err(ZoError::config("mu-floor", "must be positive and finite"));
    }
    let checks = run_suite(suite, &opts)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{}: {} passed, {failed} failed", suite.name(), checks.len() - failed);
    if let Some(first) = checks.iter().find(|c| !c.pass) {
        eprintln!("first failing property: {}", first.name);
        return Ok(PROPERTY_FAIL);
    }
    Ok(0)
}

fn cmd_attack(req: &AttackRequest) -> Result<u8> {
    let report = run_attack(req)?;
    print!("{}", report.to_text());
    if report.any_aborted() {
        return Err(numeric_abort("attack"));
    }
    Ok(0)
}
