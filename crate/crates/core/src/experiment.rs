//! Experiment drivers behind the CLI: config-driven runs, sweeps, the attack
//! protocol and the projection counterexample.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FlatConfig, ProblemConfig};
use crate::error::{Result, ZoError};
use crate::geometry::{vi_violation, ConstraintSet};
use crate::metrics::{csv_string, first_success, Envelope, FirstSuccess, RunResult};
use crate::numkit::DenseVector;
use crate::optimizers::{
    adamm_update, run_optimizer, Algorithm, AdaMMState, MeasureMode, OptConfig, StepSchedule,
};
use crate::problems::{
    make_attack_problem, make_counterexample_lp, make_logistic, make_nonconvex_with,
    make_quadratic, make_quadratic_finite_sum, victim_inputs, victim_model, AttackMode,
    NonconvexOptions, ProblemSpec, TinyMlp, DEFAULT_LAMBDA,
};
use crate::validate::PropertyCheck;

/// Environment variable overriding the worker-pool size.
pub const THREADS_ENV: &str = "ZOOPT_THREADS";

/// Worker count: `ZOOPT_THREADS` when set, else `configured`.
pub fn resolve_threads(configured: usize) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(ZoError::config(THREADS_ENV, format!("expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(configured.max(1)),
    }
}

/// Apply `f` to every item on up to `threads` workers; output order matches input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Number of pinned attack inputs.
pub fn pinned_image_count() -> usize {
    victim_inputs().0.len()
}

fn attack_images(
    model: Option<&TinyMlp>,
    image: usize,
    m: usize,
) -> Result<(TinyMlp, Vec<DenseVector>, Vec<usize>)> {
    let (images, labels) = victim_inputs();
    if image + m > images.len() {
        return Err(ZoError::config(
            "problem.m",
            format!(
                "images {image}..{} exceed the {} pinned inputs",
                image + m,
                images.len()
            ),
        ));
    }
    let images = images[image..image + m].to_vec();
    match model {
        None => Ok((victim_model(), images, labels[image..image + m].to_vec())),
        Some(model) => {
            let labels = images
                .iter()
                .map(|x| model.predict(x.as_slice()))
                .collect::<Result<Vec<_>>>()?;
            Ok((model.clone(), images, labels))
        }
    }
}

pub fn build_problem(cfg: &ProblemConfig) -> Result<ProblemSpec> {
    match cfg {
        ProblemConfig::Quadratic {
            d,
            condition,
            n,
            shift_scale,
            seed,
        } => {
            if *n == 0 {
                make_quadratic(*d, *condition, *seed)
            } else {
                make_quadratic_finite_sum(*d, *condition, *n, *shift_scale, *seed)
            }
        }
        ProblemConfig::Logistic { n, d, seed } => make_logistic(*n, *d, *seed),
        ProblemConfig::Nonconvex {
            d,
            seed,
            eps,
            omega,
            boxed,
        } => make_nonconvex_with(
            *d,
            *seed,
            NonconvexOptions {
                epsilon: *eps,
                omega: *omega,
                boxed: *boxed,
            },
        ),
        ProblemConfig::Counterexample => Ok(make_counterexample_lp()),
        ProblemConfig::Attack {
            mode,
            image,
            m,
            lambda,
            kappa,
            model,
        } => {
            let loaded = match model {
                Some(p) => Some(TinyMlp::load(p)?),
                None => None,
            };
            let (model, images, labels) = attack_images(loaded.as_ref(), *image, *m)?;
            make_attack_problem(&model, &images, &labels, *lambda, *kappa, *mode)
        }
    }
}

/// Run `opt` on `problem` once and attach the config echo.
pub fn execute(
    cfg: &ExperimentConfig,
    problem: &ProblemSpec,
    opt: &OptConfig,
    run_seed: u64,
) -> Result<RunResult> {
    let mut opt = opt.clone();
    opt.seed = run_seed;
    let start = Instant::now();
    let trace = run_optimizer(problem, &opt, cfg.query_budget)?;
    let seconds = cfg.timing.then(|| start.elapsed().as_secs_f64());
    let mut echo_cfg = cfg.clone();
    echo_cfg.optimizer = opt;
    Ok(RunResult {
        trace,
        config: echo_cfg.echo(run_seed),
        seconds,
    })
}

/// Write `<stem>.csv` and `<stem>.json` into `dir`; the envelope refers to the
/// CSV by file name so outputs do not depend on where `dir` lives.
pub fn write_run(result: &RunResult, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let csv_name = format!("{stem}.csv");
    let csv_path = dir.join(&csv_name);
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&csv_path, csv_string(&result.trace.records))
        .map_err(|e| ZoError::io(&csv_path, e))?;
    Envelope::new(result, &csv_name).write(&json_path)?;
    Ok((csv_path, json_path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ZoError::io(dir, e))
}

/// One line of a run or sweep report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLine {
    pub stem: String,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub total_queries: u64,
    pub iterations: usize,
    pub aborted: Option<String>,
}

impl RunLine {
    fn new(stem: &str, seed: u64, r: &RunResult) -> Self {
        Self {
            stem: stem.to_string(),
            seed,
            final_loss: r.trace.final_loss(),
            total_queries: r.trace.total_queries,
            iterations: r.trace.iterations,
            aborted: r.trace.aborted.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub lines: Vec<RunLine>,
}

impl RunReport {
    pub fn any_aborted(&self) -> bool {
        self.lines.iter().any(|l| l.aborted.is_some())
    }
}

fn default_stem(cfg: &ExperimentConfig) -> String {
    cfg.name
        .clone()
        .unwrap_or_else(|| format!("{}_{}", cfg.problem.kind(), cfg.optimizer.algorithm.name()))
}

struct Job {
    cfg: ExperimentConfig,
    seed: u64,
    stem: String,
}

fn run_jobs(jobs: &[Job], problem: &ProblemSpec, threads: usize, dir: &Path) -> Result<Vec<RunLine>> {
    ensure_dir(dir)?;
    let results = parallel_map(jobs, threads, |job| {
        execute(&job.cfg, problem, &job.cfg.optimizer, job.seed)
    });
    let mut lines = Vec::with_capacity(jobs.len());
    for (job, result) in jobs.iter().zip(results) {
        let result = result?;
        write_run(&result, dir, &job.stem)?;
        lines.push(RunLine::new(&job.stem, job.seed, &result));
    }
    Ok(lines)
}

/// `repeat` runs with seeds `seed, seed + 1, ...`, one CSV and envelope each.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let problem = build_problem(&cfg.problem)?;
    let stem = default_stem(cfg);
    let jobs: Vec<Job> = (0..cfg.repeat as u64)
        .map(|r| Job {
            cfg: cfg.clone(),
            seed: cfg.seed + r,
            stem: format!("{stem}_seed{}", cfg.seed + r),
        })
        .collect();
    let threads = resolve_threads(cfg.threads)?;
    Ok(RunReport {
        lines: run_jobs(&jobs, &problem, threads, &cfg.output_dir)?,
    })
}

/// One grid point of a sweep with its per-seed results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub algorithm: String,
    pub alpha: f64,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub mean_final_loss: Option<f64>,
    pub runs: Vec<RunLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn any_aborted(&self) -> bool {
        self.points
            .iter()
            .any(|p| p.runs.iter().any(|l| l.aborted.is_some()))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<12} {:>10} {:>8} {:>8} {:>16}\n",
            "algorithm", "alpha", "beta1", "beta2", "mean_final_loss"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v}"));
        for p in &self.points {
            s.push_str(&format!(
                "{:<12} {:>10} {:>8} {:>8} {:>16}\n",
                p.algorithm,
                p.alpha,
                opt(p.beta1),
                opt(p.beta2),
                p.mean_final_loss
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
            ));
        }
        s
    }
}

/// Expand the `sweep.*` grid of `flat` and run every point `repeat` times.
///
/// Each grid point is re-read as a run config with the swept keys filled in,
/// so per-algorithm defaults apply unless the file pins them. Seeds are
/// shared across grid points so comparisons are paired.
pub fn run_sweep(flat: &FlatConfig) -> Result<SweepReport> {
    let base = ExperimentConfig::from_flat_sweep(flat)?;
    let grid = base.sweep.clone().expect("sweep config");
    let mut run_flat = flat.clone();
    for k in ["sweep.algorithms", "sweep.alpha", "sweep.beta1", "sweep.beta2"] {
        run_flat.remove(k);
    }
    let problem = build_problem(&base.problem)?;

    let mut points = Vec::new();
    let mut jobs = Vec::new();
    for alg in &grid.algorithms {
        let betas: Vec<(Option<f64>, Option<f64>)> = if *alg == Algorithm::ZoAdaMM {
            grid.beta1s
                .iter()
                .flat_map(|&b1| grid.beta2s.iter().map(move |&b2| (Some(b1), Some(b2))))
                .collect()
        } else {
            vec![(None, None)]
        };
        for &alpha in &grid.alphas {
            for &(b1, b2) in &betas {
                let mut f = run_flat.clone();
                f.set("optimizer.algorithm", alg.name());
                f.set("optimizer.alpha", alpha.to_string());
                if let (Some(b1), Some(b2)) = (b1, b2) {
                    f.set("optimizer.beta1", b1.to_string());
                    f.set("optimizer.beta2", b2.to_string());
                }
                let cfg = ExperimentConfig::from_flat(&f)?;
                let mut stem = format!("{}_a{alpha}", alg.name());
                if let (Some(b1), Some(b2)) = (b1, b2) {
                    stem.push_str(&format!("_b1{b1}_b2{b2}"));
                }
                points.push(SweepPoint {
                    algorithm: alg.name().to_string(),
                    alpha,
                    beta1: b1,
                    beta2: b2,
                    mean_final_loss: None,
                    runs: Vec::new(),
                });
                for r in 0..base.repeat as u64 {
                    let seed = base.seed + r;
                    jobs.push((
                        points.len() - 1,
                        Job {
                            cfg: cfg.clone(),
                            seed,
                            stem: format!("{stem}_seed{seed}"),
                        },
                    ));
                }
            }
        }
    }

    let threads = resolve_threads(base.threads)?;
    let (owners, jobs): (Vec<usize>, Vec<Job>) = jobs.into_iter().unzip();
    let lines = run_jobs(&jobs, &problem, threads, &base.output_dir)?;
    for (owner, line) in owners.into_iter().zip(lines) {
        points[owner].runs.push(line);
    }
    for p in &mut points {
        let losses: Vec<f64> = p.runs.iter().filter_map(|l| l.final_loss).collect();
        if losses.len() == p.runs.len() && !losses.is_empty() {
            let mut acc = 0.0;
            for l in &losses {
                acc += l;
            }
            p.mean_final_loss = Some(acc / losses.len() as f64);
        }
    }
    let report = SweepReport { points };
    let json = base.output_dir.join("sweep_summary.json");
    let mut text = serde_json::to_string_pretty(&report).expect("plain data serializes");
    text.push('\n');
    std::fs::write(&json, text).map_err(|e| ZoError::io(&json, e))?;
    let txt = base.output_dir.join("sweep_summary.txt");
    std::fs::write(&txt, report.to_text()).map_err(|e| ZoError::io(&txt, e))?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackScope {
    /// One run per pinned input (`M = 1`).
    PerImage,
    /// One shared perturbation over the first `M` inputs.
    Universal,
}

impl AttackScope {
    pub fn name(&self) -> &'static str {
        match self {
            AttackScope::PerImage => "per-image",
            AttackScope::Universal => "universal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-image" => Some(AttackScope::PerImage),
            "universal" => Some(AttackScope::Universal),
            _ => None,
        }
    }
}

/// Step-size grid searched per optimizer by the attack protocol.
pub const ATTACK_ALPHAS: [f64; 6] = [0.002, 0.005, 0.01, 0.02, 0.05, 0.1];

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRequest {
    pub scope: AttackScope,
    pub m: usize,
    pub optimizers: Vec<Algorithm>,
    pub budget: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    /// Formulation override; by default projected methods attack the boxed
    /// problem and unprojected ones the `tanh` reparameterization.
    pub formulation: Option<AttackMode>,
    /// Base step sizes tried for every optimizer; the reported setting is
    /// chosen per optimizer by [`select_alpha`].
    pub alphas: Vec<f64>,
    pub lambda: f64,
}

impl AttackRequest {
    pub fn new(scope: AttackScope, optimizers: Vec<Algorithm>, budget: u64, seed: u64, out: PathBuf) -> Self {
        Self {
            scope,
            m: match scope {
                AttackScope::PerImage => 1,
                AttackScope::Universal => pinned_image_count(),
            },
            optimizers,
            budget,
            seed,
            out,
            threads: 1,
            formulation: None,
            alphas: ATTACK_ALPHAS.to_vec(),
            lambda: DEFAULT_LAMBDA,
        }
    }

    fn formulation_for(&self, alg: Algorithm) -> AttackMode {
        self.formulation.unwrap_or(if alg.supports_constraints() {
            AttackMode::Constrained
        } else {
            AttackMode::Unconstrained
        })
    }

    fn experiment(&self, alg: Algorithm, alpha: f64, image: usize, m: usize) -> Result<ExperimentConfig> {
        let mut opt = OptConfig::new(alg);
        opt.alpha = alpha;
        opt.measure = MeasureMode::Off;
        opt.validate()?;
        Ok(ExperimentConfig {
            name: None,
            problem: ProblemConfig::Attack {
                mode: self.formulation_for(alg),
                image,
                m,
                lambda: self.lambda,
                kappa: 0.0,
                model: None,
            },
            optimizer: opt,
            query_budget: self.budget,
            repeat: 1,
            seed: self.seed,
            output_dir: self.out.clone(),
            threads: 1,
            timing: false,
            sweep: None,
        })
    }
}

/// Outcome of one attack run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRun {
    pub stem: String,
    /// First pinned image of the run.
    pub image: usize,
    pub m: usize,
    pub first_success: Option<FirstSuccess>,
    pub final_loss: Option<f64>,
    pub final_distortion: f64,
    /// Images misclassified at the final iterate.
    pub final_fooled: usize,
    pub total_queries: u64,
    pub aborted: Option<String>,
}

/// Aggregate over the runs of one optimizer at one step size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub optimizer: String,
    pub formulation: String,
    pub alpha: f64,
    pub runs: usize,
    /// Runs that reached success at some recorded iterate.
    pub successes: usize,
    pub success_rate: f64,
    pub median_first_success_queries: Option<f64>,
    pub median_final_loss: Option<f64>,
    pub median_final_distortion: Option<f64>,
    /// Sum over runs of images fooled at the final iterate.
    pub images_fooled_final: usize,
    pub images_total: usize,
    pub details: Vec<AttackRun>,
}

impl AttackSummary {
    fn from_runs(optimizer: &str, formulation: &str, alpha: f64, details: Vec<AttackRun>) -> Self {
        let firsts: Vec<f64> = details
            .iter()
            .filter_map(|d| d.first_success.map(|f| f.queries as f64))
            .collect();
        let losses: Vec<f64> = details.iter().filter_map(|d| d.final_loss).collect();
        let dists: Vec<f64> = details.iter().map(|d| d.final_distortion).collect();
        let successes = details.iter().filter(|d| d.first_success.is_some()).count();
        Self {
            optimizer: optimizer.to_string(),
            formulation: formulation.to_string(),
            alpha,
            runs: details.len(),
            successes,
            success_rate: successes as f64 / details.len().max(1) as f64,
            median_first_success_queries: median(&firsts),
            median_final_loss: median(&losses),
            median_final_distortion: median(&dists),
            images_fooled_final: details.iter().map(|d| d.final_fooled).sum(),
            images_total: details.iter().map(|d| d.m).sum(),
            details,
        }
    }
}

/// Greedy step-size choice: most images fooled at the final iterate, then
/// the smallest median final objective, then the smaller step size.
pub fn select_alpha(candidates: &[AttackSummary]) -> Option<usize> {
    let key = |s: &AttackSummary| {
        (
            std::cmp::Reverse(s.images_fooled_final),
            s.median_final_loss.unwrap_or(f64::INFINITY),
            s.alpha,
        )
    };
    (0..candidates.len()).min_by(|&a, &b| {
        let (ka, kb) = (key(&candidates[a]), key(&candidates[b]));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
    })
}

/// One row of the step-size search table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrial {
    pub optimizer: String,
    pub alpha: f64,
    pub successes: usize,
    pub images_fooled_final: usize,
    pub median_final_loss: Option<f64>,
    pub median_final_distortion: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub scope: String,
    pub m: usize,
    pub budget: u64,
    pub seed: u64,
    /// Selected setting per optimizer.
    pub summaries: Vec<AttackSummary>,
    pub alpha_search: Vec<AlphaTrial>,
}

impl AttackReport {
    pub fn summary(&self, alg: Algorithm) -> Option<&AttackSummary> {
        self.summaries.iter().find(|s| s.optimizer == alg.name())
    }

    pub fn any_aborted(&self) -> bool {
        self.summaries
            .iter()
            .any(|s| s.details.iter().any(|d| d.aborted.is_some()))
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut s = format!(
            "attack scope={} m={} budget={} seed={}\n{:<12} {:<14} {:>8} {:>9} {:>10} {:>16} {:>16} {:>8}\n",
            self.scope,
            self.m,
            self.budget,
            self.seed,
            "optimizer",
            "formulation",
            "alpha",
            "success",
            "rate",
            "med_1st_queries",
            "med_distortion",
            "fooled"
        );
        for sm in &self.summaries {
            s.push_str(&format!(
                "{:<12} {:<14} {:>8} {:>9} {:>10.3} {:>16} {:>16} {:>8}\n",
                sm.optimizer,
                sm.formulation,
                sm.alpha,
                format!("{}/{}", sm.successes, sm.runs),
                sm.success_rate,
                opt(sm.median_first_success_queries),
                opt(sm.median_final_distortion),
                format!("{}/{}", sm.images_fooled_final, sm.images_total),
            ));
        }
        if self.alpha_search.len() > self.summaries.len() {
            s.push_str(&format!(
                "\nstep-size search\n{:<12} {:>8} {:>9} {:>8} {:>16} {:>16} {:>9}\n",
                "optimizer", "alpha", "success", "fooled", "med_final_loss", "med_distortion", "selected"
            ));
            for t in &self.alpha_search {
                s.push_str(&format!(
                    "{:<12} {:>8} {:>9} {:>8} {:>16} {:>16} {:>9}\n",
                    t.optimizer,
                    t.alpha,
                    t.successes,
                    t.images_fooled_final,
                    opt(t.median_final_loss),
                    opt(t.median_final_distortion),
                    if t.selected { "*" } else { "" },
                ));
            }
        }
        s
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Run the attack protocol and write per-run traces plus `summary.json` / `summary.txt`.
pub fn run_attack(req: &AttackRequest) -> Result<AttackReport> {
    if req.optimizers.is_empty() {
        return Err(ZoError::config("opt", "no optimizer given"));
    }
    if req.alphas.is_empty() {
        return Err(ZoError::config("alpha", "no step size given"));
    }
    let available = pinned_image_count();
    let groups: Vec<(usize, usize)> = match req.scope {
        AttackScope::PerImage => {
            if req.m != 1 {
                return Err(ZoError::config("m", "per-image attacks use M = 1"));
            }
            (0..available).map(|i| (i, 1)).collect()
        }
        AttackScope::Universal => {
            if req.m == 0 || req.m > available {
                return Err(ZoError::config(
                    "m",
                    format!("universal attacks need 1 <= M <= {available}"),
                ));
            }
            vec![(0, req.m)]
        }
    };
    ensure_dir(&req.out)?;

    struct AttackJob {
        cfg: ExperimentConfig,
        image: usize,
        m: usize,
        seed: u64,
        stem: String,
    }
    let searched = req.alphas.len() > 1;
    let mut jobs = Vec::new();
    for &alg in &req.optimizers {
        for &alpha in &req.alphas {
            let prefix = if searched {
                format!("{}_a{alpha}", alg.name())
            } else {
                alg.name().to_string()
            };
            for &(image, m) in &groups {
                let (stem, seed) = match req.scope {
                    AttackScope::PerImage => (format!("{prefix}_img{image}"), req.seed + image as u64),
                    AttackScope::Universal => (format!("{prefix}_universal_m{m}"), req.seed),
                };
                jobs.push(AttackJob {
                    cfg: req.experiment(alg, alpha, image, m)?,
                    image,
                    m,
                    seed,
                    stem,
                });
            }
        }
    }
    // problems are rebuilt per job; construction is cheap and keeps jobs independent
    let threads = resolve_threads(req.threads)?;
    let results = parallel_map(&jobs, threads, |job| -> Result<RunResult> {
        let problem = build_problem(&job.cfg.problem)?;
        execute(&job.cfg, &problem, &job.cfg.optimizer, job.seed)
    });

    let mut runs = Vec::with_capacity(jobs.len());
    for (job, result) in jobs.iter().zip(results) {
        let result = result?;
        write_run(&result, &req.out, &job.stem)?;
        let problem = build_problem(&job.cfg.problem)?;
        let attack = problem.attack.as_ref().expect("attack problem");
        let z = result.trace.final_iterate.as_slice();
        runs.push(AttackRun {
            stem: job.stem.clone(),
            image: job.image,
            m: job.m,
            first_success: first_success(&result.trace.records),
            final_loss: result.trace.final_loss(),
            final_distortion: attack.distortion(z),
            final_fooled: attack.success_count(z),
            total_queries: result.trace.total_queries,
            aborted: result.trace.aborted.clone(),
        });
    }

    let mut runs = runs.into_iter();
    let mut summaries = Vec::new();
    let mut alpha_search = Vec::new();
    for &alg in &req.optimizers {
        let formulation = req.formulation_for(alg).name();
        let candidates: Vec<AttackSummary> = req
            .alphas
            .iter()
            .map(|&alpha| {
                let details = runs.by_ref().take(groups.len()).collect();
                AttackSummary::from_runs(alg.name(), formulation, alpha, details)
            })
            .collect();
        let chosen = select_alpha(&candidates).expect("non-empty grid");
        for (i, c) in candidates.iter().enumerate() {
            alpha_search.push(AlphaTrial {
                optimizer: c.optimizer.clone(),
                alpha: c.alpha,
                successes: c.successes,
                images_fooled_final: c.images_fooled_final,
                median_final_loss: c.median_final_loss,
                median_final_distortion: c.median_final_distortion,
                selected: i == chosen,
            });
        }
        summaries.push(candidates.into_iter().nth(chosen).expect("index in range"));
    }
    let report = AttackReport {
        scope: req.scope.name().to_string(),
        m: req.m,
        budget: req.budget,
        seed: req.seed,
        summaries,
        alpha_search,
    };
    let json = req.out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&report).expect("plain data serializes");
    text.push('\n');
    std::fs::write(&json, text).map_err(|e| ZoError::io(&json, e))?;
    let txt = req.out.join("summary.txt");
    std::fs::write(&txt, report.to_text()).map_err(|e| ZoError::io(&txt, e))?;
    Ok(report)
}

/// Both projection variants of ZO-AdaMM on the counterexample, driven by the
/// exact gradient.
#[derive(Clone, Debug)]
pub struct Prop1Report {
    pub iterations: usize,
    pub alpha: f64,
    pub euclidean_final: DenseVector,
    /// Largest coordinate deviation from `[0.5, 0.5]` along the Euclidean trajectory.
    pub euclidean_max_deviation: f64,
    pub mahalanobis_first: DenseVector,
    pub mahalanobis_final: DenseVector,
    /// Largest `|x1 + x2| - 1` along the weighted trajectory.
    pub mahalanobis_max_violation: f64,
    pub objective_strictly_decreasing: bool,
    pub x1_strictly_increasing: bool,
    /// `<grad f(x0), [0.6, 0.4] - x0>` at the Euclidean fixed point.
    pub vi_witness: f64,
    pub checks: Vec<PropertyCheck>,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn prop1_config(alpha: f64, euclidean: bool) -> OptConfig {
    // beta1 = beta2 = 0 makes sqrt(v_hat) = |grad| exactly for a constant gradient
    let mut c = OptConfig::new(Algorithm::ZoAdaMM);
    c.alpha = alpha;
    c.alpha_schedule = StepSchedule::InverseSqrt;
    c.beta1 = 0.0;
    c.beta2 = 0.0;
    c.euclidean_projection_override = euclidean;
    c
}

fn prop1_trajectory(iterations: usize, alpha: f64, euclidean: bool) -> Result<Vec<DenseVector>> {
    let p = make_counterexample_lp();
    let cfg = prop1_config(alpha, euclidean);
    let mut state = AdaMMState::new(2, cfg.v0, cfg.vhat0);
    let mut x = p.initial.clone();
    let mut out = vec![x.clone()];
    for t in 1..=iterations {
        let g = p
            .metadata
            .analytic_gradient(&x)
            .ok_or_else(|| ZoError::Internal("counterexample has a gradient".into()))?;
        let alpha_t = cfg.alpha_schedule.at(cfg.alpha, t);
        let step = adamm_update(&state, &x, &g, alpha_t, cfg.beta1, &cfg, &p.constraint)?;
        state = step.state;
        x = step.next;
        out.push(x.clone());
    }
    Ok(out)
}

/// Reproduce the non-convergence of the Euclidean-projection variant.
pub fn prop1(iterations: usize, alpha: f64) -> Result<Prop1Report> {
    if iterations == 0 {
        return Err(ZoError::config("iterations", "must be >= 1"));
    }
    let p = make_counterexample_lp();
    let f = |x: &DenseVector| p.objective.full_loss(x);
    let start = p.initial.clone();

    let euc = prop1_trajectory(iterations, alpha, true)?;
    let euclidean_max_deviation = euc
        .iter()
        .map(|x| x.max_abs_diff(&start))
        .fold(0.0, f64::max);

    let mah = prop1_trajectory(iterations, alpha, false)?;
    let band = match &p.constraint {
        ConstraintSet::SymmetricBand { a, b } => (a.clone(), *b),
        _ => return Err(ZoError::Internal("counterexample uses a band".into())),
    };
    let mut max_violation = f64::NEG_INFINITY;
    let mut decreasing = true;
    let mut increasing = true;
    for w in mah.windows(2) {
        max_violation = max_violation.max(band.0.dot(&w[1]).abs() - band.1);
        decreasing &= f(&w[1])? < f(&w[0])?;
        increasing &= w[1][0] > w[0][0];
    }

    let grad = p
        .metadata
        .analytic_gradient(&start)
        .ok_or_else(|| ZoError::Internal("counterexample has a gradient".into()))?;
    let x_test = DenseVector::new(vec![0.6, 0.4])?;
    let vi_witness = vi_violation(&grad, &start, &x_test)?;

    let euclidean_final = euc.last().expect("non-empty").clone();
    let mahalanobis_final = mah.last().expect("non-empty").clone();
    let mahalanobis_first = mah[1].clone();
    let expected_first = DenseVector::new(vec![0.5 + alpha / 3.0, 0.5 - alpha / 3.0])?;
    let checks = vec![
        PropertyCheck::at_most(
            "euclidean variant stays at [0.5, 0.5]",
            euclidean_max_deviation,
            1e-12,
        ),
        PropertyCheck::at_most(
            "vi witness equals -0.1",
            (vi_witness + 0.1).abs(),
            1e-12,
        ),
        PropertyCheck::at_most(
            "weighted first step equals [0.5 + a/3, 0.5 - a/3]",
            mahalanobis_first.max_abs_diff(&expected_first),
            1e-12,
        ),
        PropertyCheck::at_most(
            "weighted variant feasible (|x1 + x2| - 1)",
            max_violation,
            1e-12,
        ),
        PropertyCheck::flag(
            "weighted variant strictly decreases the objective",
            decreasing,
        ),
        PropertyCheck::flag("weighted variant x1 strictly increasing", increasing),
        PropertyCheck::at_least(
            "weighted variant leaves the fixed point (x1 - 0.5)",
            mahalanobis_final[0] - 0.5,
            f64::MIN_POSITIVE,
        ),
    ];
    Ok(Prop1Report {
        iterations,
        alpha,
        euclidean_final,
        euclidean_max_deviation,
        mahalanobis_first,
        mahalanobis_final,
        mahalanobis_max_violation: max_violation,
        objective_strictly_decreasing: decreasing,
        x1_strictly_increasing: increasing,
        vi_witness,
        checks,
    })
}
