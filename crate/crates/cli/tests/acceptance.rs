//! Acceptance suite: ten criteria, each reported as one PASS/FAIL line on
//! stderr (written directly so the lines survive output capture).

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use zoopt_core::experiment::{median, run_attack, AttackRequest, AttackScope};
use zoopt_core::optimizers::run_optimizer;
use zoopt_core::problems::{make_logistic, make_quadratic};
use zoopt_core::validate::{
    estimator_unbiasedness, geometry_checks, reduction_checks, smoothing_bound_checks,
    sphere_concentration, variance_scaling_b, variance_scaling_q, PropertyCheck, ValidateOptions,
};
use zoopt_core::{Algorithm, OptConfig, Result};

const SEED: u64 = 2019;

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_checks(checks: &[PropertyCheck]) -> Outcome {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} checks passed", checks.len())
        } else {
            format!("failing: {}", failed.join("; "))
        },
    }
}

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

/// Run one criterion, append its time limit to the verdict and print the line.
fn criterion(id: usize, title: &str, limit: Duration, body: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let outcome = body().unwrap_or_else(|e| Outcome {
        pass: false,
        detail: format!("error: {e}"),
    });
    let elapsed = start.elapsed();
    let pass = outcome.pass && elapsed < limit;
    report(&format!(
        "{} criterion {id} {title}: {} ({:.2}s, limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    ));
    pass
}

fn zoopt() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_zoopt"));
    c.env_remove("ZOOPT_THREADS");
    c
}

fn prop1_via_cli() -> Result<Outcome> {
    let out = zoopt().arg("prop1").output().expect("spawn zoopt");
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let witness: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("vi witness: "))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(f64::NAN);
    let all_pass = text.lines().filter(|l| l.starts_with("FAIL")).count() == 0
        && text.lines().filter(|l| l.starts_with("PASS")).count() >= 5;
    let report = zoopt_core::experiment::prop1(1000, 0.1)?;
    let fixed = report.euclidean_final.as_slice() == [0.5, 0.5]
        && report.euclidean_max_deviation <= 1e-12;
    Ok(Outcome {
        pass: out.status.code() == Some(0)
            && all_pass
            && (witness + 0.1).abs() <= 1e-12
            && fixed
            && report.objective_strictly_decreasing
            && report.mahalanobis_max_violation <= 1e-12,
        detail: format!(
            "euclidean final {:?}, vi witness {witness}, weighted final {:?}",
            report.euclidean_final.as_slice(),
            report.mahalanobis_final.as_slice()
        ),
    })
}

fn convergence() -> Result<Outcome> {
    let quad = make_quadratic(20, 1.0, SEED)?;
    let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
    cfg.seed = SEED;
    let trace = run_optimizer(&quad, &cfg, 100_000)?;
    let gap = trace.final_loss().unwrap_or(f64::INFINITY) - quad.metadata.optimum_value.unwrap_or(0.0);

    let logi = make_logistic(200, 10, SEED)?;
    let budget = cfg.queries_per_iteration(logi.dim()) * 2000;
    let trace = run_optimizer(&logi, &cfg, budget)?;
    let r500 = trace.regret_prefix(500)?;
    let r2000 = trace.regret_prefix(2000)?;
    Ok(Outcome {
        pass: gap <= 1e-3 && trace.total_queries <= budget && r2000 < r500,
        detail: format!(
            "quadratic f - f* = {gap:.3e} within 1e5 queries; logistic R_T/T {r500:.4e} (T=500) -> {r2000:.4e} (T=2000)"
        ),
    })
}

fn toy_attack(root: &Path) -> Result<Outcome> {
    let opts = vec![Algorithm::ZoAdaMM, Algorithm::ZoPsgd];
    let mut adamm_success = Vec::new();
    let mut adamm_dist = Vec::new();
    let mut psgd_dist = Vec::new();
    let mut universal_fooled = Vec::new();
    for seed in 0..3 {
        let req = AttackRequest::new(
            AttackScope::PerImage,
            opts.clone(),
            20_000,
            seed,
            root.join(format!("per_image_{seed}")),
        );
        let rep = run_attack(&req)?;
        let a = rep.summary(Algorithm::ZoAdaMM).expect("adamm ran");
        let p = rep.summary(Algorithm::ZoPsgd).expect("psgd ran");
        adamm_success.push(a.successes as f64);
        adamm_dist.push(a.median_final_distortion.unwrap_or(f64::INFINITY));
        psgd_dist.push(p.median_final_distortion.unwrap_or(f64::INFINITY));

        let mut req = AttackRequest::new(
            AttackScope::Universal,
            vec![Algorithm::ZoAdaMM],
            20_000,
            seed,
            root.join(format!("universal_{seed}")),
        );
        req.m = 10;
        let rep = run_attack(&req)?;
        universal_fooled.push(rep.summary(Algorithm::ZoAdaMM).expect("adamm ran").images_fooled_final as f64);
    }
    let succ = median(&adamm_success).unwrap_or(0.0);
    let (da, dp) = (
        median(&adamm_dist).unwrap_or(f64::INFINITY),
        median(&psgd_dist).unwrap_or(0.0),
    );
    let uni = median(&universal_fooled).unwrap_or(0.0);
    Ok(Outcome {
        pass: succ >= 8.0 && da <= dp && uni >= 6.0,
        detail: format!(
            "ZO-AdaMM per-image successes {succ}/10, median distortion {da:.5} vs ZO-PSGD {dp:.5}, universal fooled {uni}/10 (medians over 3 seeds)"
        ),
    })
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("readable output"),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism(root: &Path) -> Result<Outcome> {
    let dir = root.join("det_run");
    let attack_dir = root.join("det_attack");
    let cfg = root.join("det.cfg");
    std::fs::write(
        &cfg,
        format!(
            "problem.kind = quadratic\nproblem.d = 20\nproblem.n = 50\nproblem.condition = 4\n\
             estimator.b = 5\nquery_budget = 30000\nrepeat = 2\nseed = 11\noutput_dir = {}\n",
            dir.display()
        ),
    )
    .expect("write config");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&dir);
        let _ = std::fs::remove_dir_all(&attack_dir);
        let run = zoopt().arg("run").arg(&cfg).output().expect("spawn zoopt");
        let attack = zoopt()
            .args(["attack", "--mode", "per-image", "--opt", "zo-adamm,zo-sgd", "--budget", "3000", "--seed", "5"])
            .arg("--out")
            .arg(&attack_dir)
            .output()
            .expect("spawn zoopt");
        if run.status.code() != Some(0) || attack.status.code() != Some(0) {
            return Ok(Outcome {
                pass: false,
                detail: format!("exit codes {:?} / {:?}", run.status.code(), attack.status.code()),
            });
        }
        snapshots.push((read_dir_bytes(&dir), read_dir_bytes(&attack_dir)));
    }
    let files = snapshots[0].0.len() + snapshots[0].1.len();
    let csvs = snapshots[0].0.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    Ok(Outcome {
        pass: snapshots[0] == snapshots[1] && csvs == 2,
        detail: format!("{files} CSV/JSON/summary files identical byte for byte across two executions"),
    })
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let opts = ValidateOptions {
        seed: SEED,
        ..ValidateOptions::default()
    };
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "projection counterexample", secs(1), prop1_via_cli),
        criterion(2, "two-point estimator unbiasedness", secs(30), || {
            Ok(from_checks(&estimator_unbiasedness(200_000, SEED)?))
        }),
        criterion(3, "variance scaling in q and b", secs(60), || {
            let mut c = variance_scaling_q(10_000, SEED)?;
            c.extend(variance_scaling_b(20_000, SEED)?);
            Ok(from_checks(&c))
        }),
        criterion(4, "sphere concentration", secs(10), || {
            Ok(from_checks(&sphere_concentration(100, 100_000, SEED)?))
        }),
        criterion(5, "AdaMM reductions", secs(5), || Ok(from_checks(&reduction_checks(SEED)?))),
        criterion(6, "smoothing bounds", secs(60), || {
            Ok(from_checks(&smoothing_bound_checks(&opts, 20, 100_000)?))
        }),
        criterion(7, "convergence", secs(120), convergence),
        criterion(8, "toy attack", secs(300), || toy_attack(tmp.path())),
        criterion(9, "projection geometry", secs(10), || Ok(from_checks(&geometry_checks(SEED)?))),
        criterion(10, "determinism", secs(60), || determinism(tmp.path())),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, p)| !**p)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
