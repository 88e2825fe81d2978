//! ZO-AdaMM and the baseline zeroth-order methods, plus the budgeted run loop.
//!
//! ZO-AdaMM keeps `(m, v, v_hat)` and moves along `v_hat^{-1/2} m`, projecting
//! back onto the feasible set under the weighted distance with
//! `h = sqrt(v_hat)`. Baselines share the estimator machinery and differ only
//! in their update rule and default schedules:
//!
//! | algorithm    | update                               | set        |
//! |--------------|--------------------------------------|------------|
//! | `zo-sgd`     | `x - a g`                            | none       |
//! | `zo-signsgd` | `x - a sign(g)`                      | none       |
//! | `zo-scd`     | `x - a g` on sampled coordinates     | none       |
//! | `zo-psgd`    | `P(x - a g)`                         | Euclidean  |
//! | `zo-smd`     | `P(x - a g)`, `mu_t = mu0/(d t)`     | Euclidean  |
//! | `zo-nes`     | `P(x - a sign(g))`, antithetic NES   | Euclidean  |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};
use crate::estimators::{
    averaged_on_batch, estimate_on_batch, Directions, EstimatorConfig, EstimatorKind, MU_FLOOR,
};
use crate::geometry::{
    mahalanobis_measure, project_euclidean, project_mahalanobis, ConstraintSet, DiagonalMetric,
};
use crate::metrics::{Trace, TraceRecord};
use crate::numkit::{elementwise_max, sign0, DenseVector, RngStream};
use crate::problems::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    ZoAdaMM,
    ZoSgd,
    ZoSignSgd,
    ZoScd,
    ZoPsgd,
    ZoSmd,
    ZoNes,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::ZoAdaMM,
        Algorithm::ZoSgd,
        Algorithm::ZoSignSgd,
        Algorithm::ZoScd,
        Algorithm::ZoPsgd,
        Algorithm::ZoSmd,
        Algorithm::ZoNes,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ZoAdaMM => "zo-adamm",
            Algorithm::ZoSgd => "zo-sgd",
            Algorithm::ZoSignSgd => "zo-signsgd",
            Algorithm::ZoScd => "zo-scd",
            Algorithm::ZoPsgd => "zo-psgd",
            Algorithm::ZoSmd => "zo-smd",
            Algorithm::ZoNes => "zo-nes",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == s)
    }

    /// Whether the method handles a constraint set (by projection).
    pub fn supports_constraints(&self) -> bool {
        matches!(
            self,
            Algorithm::ZoAdaMM | Algorithm::ZoPsgd | Algorithm::ZoSmd | Algorithm::ZoNes
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant,
    /// `alpha / sqrt(t)`.
    InverseSqrt,
}

impl StepSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            StepSchedule::Constant => "constant",
            StepSchedule::InverseSqrt => "inverse-sqrt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(StepSchedule::Constant),
            "inverse-sqrt" => Some(StepSchedule::InverseSqrt),
            _ => None,
        }
    }

    pub fn at(&self, alpha: f64, t: usize) -> f64 {
        match self {
            StepSchedule::Constant => alpha,
            StepSchedule::InverseSqrt => alpha / (t as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MuSchedule {
    Constant,
    /// `mu0 / sqrt(T d)` with `T` the planned iteration count.
    InverseSqrtTd,
    /// `mu0 / (d t)`.
    InverseDt,
}

impl MuSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            MuSchedule::Constant => "constant",
            MuSchedule::InverseSqrtTd => "inverse-sqrt-td",
            MuSchedule::InverseDt => "inverse-dt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(MuSchedule::Constant),
            "inverse-sqrt-td" => Some(MuSchedule::InverseSqrtTd),
            "inverse-dt" => Some(MuSchedule::InverseDt),
            _ => None,
        }
    }

    /// Smoothing radius at iteration `t` (1-based) of `horizon`, clamped at [`MU_FLOOR`].
    pub fn at(&self, mu0: f64, t: usize, horizon: usize, d: usize) -> f64 {
        let mu = match self {
            MuSchedule::Constant => mu0,
            MuSchedule::InverseSqrtTd => mu0 / ((horizon.max(1) * d) as f64).sqrt(),
            MuSchedule::InverseDt => mu0 / (d as f64 * t as f64),
        };
        mu.max(MU_FLOOR)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Beta1Schedule {
    Constant,
    /// `beta1 / t`, the decay used by the convex regret analysis.
    InverseT,
}

impl Beta1Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Beta1Schedule::Constant => "constant",
            Beta1Schedule::InverseT => "inverse-t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Beta1Schedule::Constant),
            "inverse-t" => Some(Beta1Schedule::InverseT),
            _ => None,
        }
    }

    pub fn at(&self, beta1: f64, t: usize) -> f64 {
        match self {
            Beta1Schedule::Constant => beta1,
            Beta1Schedule::InverseT => beta1 / t as f64,
        }
    }
}

/// How the `measure_m` column is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureMode {
    /// Analytic gradient when the problem has one, otherwise approximate.
    Auto,
    /// Analytic gradient only; the column stays empty for black-box problems.
    Analytic,
    Off,
}

impl MeasureMode {
    pub fn name(&self) -> &'static str {
        match self {
            MeasureMode::Auto => "auto",
            MeasureMode::Analytic => "analytic",
            MeasureMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(MeasureMode::Auto),
            "analytic" => Some(MeasureMode::Analytic),
            "off" => Some(MeasureMode::Off),
            _ => None,
        }
    }
}

/// Direction count of the averaged estimator that stands in for the true
/// gradient when `measure_m` is approximated.
pub const APPROX_MEASURE_Q: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub algorithm: Algorithm,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub alpha_schedule: StepSchedule,
    pub mu_schedule: MuSchedule,
    pub beta1_schedule: Beta1Schedule,
    pub v0: f64,
    pub vhat0: f64,
    pub use_vhat_max: bool,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    /// Project with the Euclidean metric instead of `sqrt(v_hat)`. Only for
    /// reproducing the non-convergence counterexample.
    pub euclidean_projection_override: bool,
    /// Record every `stride`-th iteration; `None` picks 1 up to 2000 iterations, else 10.
    pub stride: Option<usize>,
    pub measure: MeasureMode,
}

impl OptConfig {
    /// Defaults for `algorithm`: `beta1 = 0.9`, `beta2 = 0.3`, `v0 = v_hat0 = 1e-5`,
    /// `alpha_t = alpha / sqrt(t)` with `alpha = 0.1` for ZO-AdaMM and `0.01`
    /// otherwise, and the method's own estimator and `mu` schedule.
    pub fn new(algorithm: Algorithm) -> Self {
        let (kind, mu_schedule, mu) = match algorithm {
            Algorithm::ZoAdaMM => (
                EstimatorKind::UniformTwoPoint,
                MuSchedule::InverseSqrtTd,
                1.0,
            ),
            Algorithm::ZoSmd => (EstimatorKind::UniformTwoPoint, MuSchedule::InverseDt, 0.1),
            Algorithm::ZoScd => (EstimatorKind::Coordinate, MuSchedule::Constant, 0.005),
            Algorithm::ZoNes => (EstimatorKind::NesAntithetic, MuSchedule::Constant, 0.005),
            _ => (EstimatorKind::UniformTwoPoint, MuSchedule::Constant, 0.005),
        };
        Self {
            algorithm,
            beta1: 0.9,
            beta2: 0.3,
            alpha: if algorithm == Algorithm::ZoAdaMM { 0.1 } else { 0.01 },
            alpha_schedule: StepSchedule::InverseSqrt,
            mu_schedule,
            beta1_schedule: Beta1Schedule::Constant,
            v0: 1e-5,
            vhat0: 1e-5,
            use_vhat_max: true,
            estimator: EstimatorConfig {
                mu,
                kind,
                ..EstimatorConfig::default()
            },
            seed: 0,
            euclidean_projection_override: false,
            stride: None,
            measure: MeasureMode::Auto,
        }
    }

    /// `beta1 / beta2`, when defined.
    pub fn gamma(&self) -> Option<f64> {
        (self.beta2 > 0.0).then(|| self.beta1 / self.beta2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ZoError::config("optimizer.alpha", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta1) {
            return Err(ZoError::config("optimizer.beta1", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta2) {
            return Err(ZoError::config("optimizer.beta2", "must lie in [0, 1]"));
        }
        if self.algorithm == Algorithm::ZoAdaMM {
            if !(self.vhat0 > 0.0 && self.vhat0.is_finite()) {
                return Err(ZoError::config("optimizer.vhat0", "must be positive"));
            }
            if !(self.v0 >= 0.0 && self.v0.is_finite()) {
                return Err(ZoError::config("optimizer.v0", "must be non-negative"));
            }
        }
        if self.stride == Some(0) {
            return Err(ZoError::config("run.stride", "must be >= 1"));
        }
        self.estimator.validate()
    }

    /// Queries consumed by one iteration in dimension `d`.
    pub fn queries_per_iteration(&self, d: usize) -> u64 {
        self.estimator.queries_per_call(d)
    }

    /// Flat `optimizer.*` / `estimator.*` echo of the update-rule settings.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("optimizer.algorithm", self.algorithm.name().into());
        put("optimizer.beta1", self.beta1.to_string());
        put("optimizer.beta2", self.beta2.to_string());
        put("optimizer.alpha", self.alpha.to_string());
        put(
            "optimizer.alpha_schedule",
            self.alpha_schedule.name().into(),
        );
        put("optimizer.mu_schedule", self.mu_schedule.name().into());
        put(
            "optimizer.beta1_schedule",
            self.beta1_schedule.name().into(),
        );
        put("optimizer.v0", self.v0.to_string());
        put("optimizer.vhat0", self.vhat0.to_string());
        put("optimizer.vhat_max", self.use_vhat_max.to_string());
        put(
            "optimizer.euclidean_projection_override",
            self.euclidean_projection_override.to_string(),
        );
        put("estimator.mu", self.estimator.mu.to_string());
        put("estimator.b", self.estimator.b.to_string());
        put("estimator.q", self.estimator.q.to_string());
        put("estimator.kind", self.estimator.kind.name().into());
        put(
            "estimator.directions",
            self.estimator.directions.name().into(),
        );
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaMMState {
    pub m: DenseVector,
    pub v: DenseVector,
    pub v_hat: DenseVector,
    pub t: usize,
}

impl AdaMMState {
    pub fn new(d: usize, v0: f64, vhat0: f64) -> Self {
        Self {
            m: DenseVector::zeros(d),
            v: DenseVector::filled(d, v0),
            v_hat: DenseVector::filled(d, vhat0),
            t: 0,
        }
    }

    /// Metric weights `sqrt(v_hat)`; exact zeros (possible only with max
    /// tracking off) are lifted to the smallest positive double.
    pub fn metric(&self) -> DiagonalMetric {
        let h = self.v_hat.map(|v| v.sqrt().max(f64::MIN_POSITIVE));
        DiagonalMetric::new(h).expect("lifted weights are positive")
    }

    /// `v_hat^{-1/2} m` with `0/0 = 0`.
    pub fn direction(&self) -> DenseVector {
        self.m
            .zip_map(&self.v_hat, |m, v| if v > 0.0 { m / v.sqrt() } else { 0.0 })
    }
}

/// One step's worth of output from [`adamm_update`].
#[derive(Clone, Debug)]
pub struct AdaMMStep {
    pub state: AdaMMState,
    pub next: DenseVector,
    pub direction: DenseVector,
    pub alpha_t: f64,
}

fn check_gradient(g_hat: &DenseVector, t: usize) -> Result<()> {
    g_hat
        .check_finite("gradient estimate")
        .map_err(|e| e.at_iteration(t))
}

/// Full AdaMM update with the step size and momentum weight supplied.
pub fn adamm_update(
    state: &AdaMMState,
    x: &DenseVector,
    g_hat: &DenseVector,
    alpha_t: f64,
    beta1_t: f64,
    cfg: &OptConfig,
    set: &ConstraintSet,
) -> Result<AdaMMStep> {
    let t = state.t + 1;
    check_gradient(g_hat, t)?;
    x.check_dim(g_hat)?;
    let beta2 = cfg.beta2;
    let m = state
        .m
        .zip_map(g_hat, |m, g| beta1_t * m + (1.0 - beta1_t) * g);
    let v = state
        .v
        .zip_map(g_hat, |v, g| beta2 * v + (1.0 - beta2) * g * g);
    let v_hat = if cfg.use_vhat_max {
        elementwise_max(&state.v_hat, &v)?
    } else {
        v.clone()
    };
    let next_state = AdaMMState { m, v, v_hat, t };
    let direction = next_state.direction();
    let y = x.add_scaled(-alpha_t, &direction);
    let next = if cfg.euclidean_projection_override {
        project_euclidean(set, &y)?
    } else {
        project_mahalanobis(set, &next_state.metric(), &y)?
    };
    next.check_finite("iterate")
        .map_err(|e| e.at_iteration(t))?;
    Ok(AdaMMStep {
        state: next_state,
        next,
        direction,
        alpha_t,
    })
}

/// One ZO-AdaMM step using the schedules in `cfg`.
pub fn zo_adamm_step(
    state: &AdaMMState,
    x: &DenseVector,
    g_hat: &DenseVector,
    cfg: &OptConfig,
    set: &ConstraintSet,
) -> Result<(AdaMMState, DenseVector)> {
    let t = state.t + 1;
    let alpha_t = cfg.alpha_schedule.at(cfg.alpha, t);
    let beta1_t = cfg.beta1_schedule.at(cfg.beta1, t);
    let step = adamm_update(state, x, g_hat, alpha_t, beta1_t, cfg, set)?;
    Ok((step.state, step.next))
}

fn require_projection(set: &ConstraintSet, projected: bool, name: &str) -> Result<()> {
    if !projected && !set.is_unconstrained() {
        return Err(ZoError::config(
            "optimizer.algorithm",
            format!(
                "{name} without projection requires an unconstrained problem, got {}",
                set.name()
            ),
        ));
    }
    Ok(())
}

/// `x - alpha g`, Euclidean-projected when `projected` (ZO-PSGD).
pub fn zo_sgd_step(
    x: &DenseVector,
    g_hat: &DenseVector,
    alpha_t: f64,
    set: &ConstraintSet,
    projected: bool,
) -> Result<DenseVector> {
    require_projection(set, projected, "ZO-SGD")?;
    let y = x.add_scaled(-alpha_t, g_hat);
    if projected {
        project_euclidean(set, &y)
    } else {
        Ok(y)
    }
}

/// `x - alpha sign(g)`, Euclidean-projected when `projected` (ZO-NES).
pub fn zo_signsgd_step(
    x: &DenseVector,
    g_hat: &DenseVector,
    alpha_t: f64,
    set: &ConstraintSet,
    projected: bool,
) -> Result<DenseVector> {
    require_projection(set, projected, "ZO-signSGD")?;
    let y = x.add_scaled(-alpha_t, &g_hat.signum0());
    if projected {
        project_euclidean(set, &y)
    } else {
        Ok(y)
    }
}

/// Mirror descent with the squared-Euclidean mirror map; identical mechanics
/// to the projected SGD step, the method differs only in its schedules.
pub fn zo_smd_step(
    x: &DenseVector,
    g_hat: &DenseVector,
    alpha_t: f64,
    set: &ConstraintSet,
) -> Result<DenseVector> {
    zo_sgd_step(x, g_hat, alpha_t, set, true)
}

/// `x - alpha g` where `g` is zero outside the sampled coordinates.
pub fn zo_scd_step(
    x: &DenseVector,
    sparse_estimate: &DenseVector,
    alpha_t: f64,
) -> Result<DenseVector> {
    x.check_dim(sparse_estimate)?;
    Ok(x.zip_map(sparse_estimate, |xi, gi| {
        if gi == 0.0 {
            xi
        } else {
            xi - alpha_t * gi
        }
    }))
}

/// What the observer sees after every iteration of [`run_optimizer_observed`].
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub iter: usize,
    pub x: &'a DenseVector,
    pub g_hat: &'a DenseVector,
    /// Unscaled descent direction (`v_hat^{-1/2} m`, `sign(g)` or `g`).
    pub direction: &'a DenseVector,
    pub next: &'a DenseVector,
    pub alpha_t: f64,
    pub mu_t: f64,
    pub state: Option<&'a AdaMMState>,
}

/// Run until the next iteration would exceed `query_budget`.
pub fn run_optimizer(problem: &ProblemSpec, cfg: &OptConfig, query_budget: u64) -> Result<Trace> {
    run_optimizer_observed(problem, cfg, query_budget, |_| {})
}

/// [`run_optimizer`] with a per-iteration callback.
///
/// Configuration problems are returned as errors before any query is made.
/// Numeric failures during the run end it early: the returned trace keeps
/// every record up to the failure and carries the message in `aborted`.
pub fn run_optimizer_observed(
    problem: &ProblemSpec,
    cfg: &OptConfig,
    query_budget: u64,
    mut observe: impl FnMut(&StepEvent<'_>),
) -> Result<Trace> {
    cfg.validate()?;
    let d = problem.dim();
    let set = &problem.constraint;
    if !cfg.algorithm.supports_constraints() && !set.is_unconstrained() {
        return Err(ZoError::config(
            "optimizer.algorithm",
            format!(
                "{} does not handle constraints but the problem has a {} set",
                cfg.algorithm.name(),
                set.name()
            ),
        ));
    }
    let cost = cfg.queries_per_iteration(d);
    if query_budget < cost {
        return Err(ZoError::config(
            "query_budget",
            format!("budget {query_budget} is below the per-iteration cost {cost}"),
        ));
    }
    if cfg.euclidean_projection_override {
        log::warn!(
            "euclidean_projection_override is set: ZO-AdaMM will project in the Euclidean metric"
        );
    }

    let horizon = (query_budget / cost) as usize;
    let stride = cfg.stride.unwrap_or(if horizon <= 2000 { 1 } else { 10 });
    let obj = problem.objective.fresh();
    let mut rng = RngStream::new(cfg.seed);
    let mut recorder = Recorder::new(problem, cfg);

    let mut x = problem.initial.clone();
    let mut state = AdaMMState::new(d, cfg.v0, cfg.vhat0);
    let mut records = vec![recorder.record(0, 0, &x, &state, cfg.alpha)?];
    let mut online_losses = Vec::with_capacity(horizon);
    let mut comparator_losses = Vec::new();
    let mut aborted = None;
    let mut iterations = 0;

    for t in 1..=horizon {
        let alpha_t = cfg.alpha_schedule.at(cfg.alpha, t);
        let mu_t = cfg.mu_schedule.at(cfg.estimator.mu, t, horizon, d);
        let step = (|| -> Result<(DenseVector, DenseVector, DenseVector)> {
            let batch = obj.sample_minibatch(cfg.estimator.b, &mut rng)?;
            let (online, comparator) = recorder.online(&x, &batch)?;
            online_losses.push(online);
            if let Some(c) = comparator {
                comparator_losses.push(c);
            }
            let g = estimate_on_batch(&obj, &x, &batch, &cfg.estimator, mu_t, &mut rng)
                .map_err(|e| e.at_iteration(t))?;
            check_gradient(&g, t)?;
            let (next, direction) = match cfg.algorithm {
                Algorithm::ZoAdaMM => {
                    let beta1_t = cfg.beta1_schedule.at(cfg.beta1, t);
                    let s = adamm_update(&state, &x, &g, alpha_t, beta1_t, cfg, set)?;
                    state = s.state;
                    (s.next, s.direction)
                }
                Algorithm::ZoSgd => (zo_sgd_step(&x, &g, alpha_t, set, false)?, g.clone()),
                Algorithm::ZoPsgd => (zo_sgd_step(&x, &g, alpha_t, set, true)?, g.clone()),
                Algorithm::ZoSmd => (zo_smd_step(&x, &g, alpha_t, set)?, g.clone()),
                Algorithm::ZoSignSgd => {
                    (zo_signsgd_step(&x, &g, alpha_t, set, false)?, g.signum0())
                }
                Algorithm::ZoNes => (zo_signsgd_step(&x, &g, alpha_t, set, true)?, g.signum0()),
                Algorithm::ZoScd => (zo_scd_step(&x, &g, alpha_t)?, g.clone()),
            };
            next.check_finite("iterate")
                .map_err(|e| e.at_iteration(t))?;
            Ok((g, direction, next))
        })();
        let (g, direction, next) = match step {
            Ok(v) => v,
            Err(e) if e.is_numeric() => {
                aborted = Some(e.at_iteration(t).to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        observe(&StepEvent {
            iter: t,
            x: &x,
            g_hat: &g,
            direction: &direction,
            next: &next,
            alpha_t,
            mu_t,
            state: (cfg.algorithm == Algorithm::ZoAdaMM).then_some(&state),
        });
        x = next;
        iterations = t;
        if t % stride == 0 || t == horizon {
            match recorder.record(t, obj.queries(), &x, &state, alpha_t) {
                Ok(r) => records.push(r),
                Err(e) if e.is_numeric() => {
                    aborted = Some(e.at_iteration(t).to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }

    let random_iterate = if iterations > 0 {
        1 + rng.below(iterations)
    } else {
        0
    };
    Ok(Trace {
        records,
        final_iterate: x,
        total_queries: obj.queries(),
        iterations,
        random_iterate,
        online_losses,
        comparator_losses,
        measure_approx: recorder.approx,
        aborted,
    })
}

/// Metric-side evaluations; never touches the optimizer's oracle counter or rng.
struct Recorder<'a> {
    problem: &'a ProblemSpec,
    cfg: &'a OptConfig,
    approx: bool,
    metric_obj: crate::oracle::StochasticObjective,
    metric_rng: RngStream,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a ProblemSpec, cfg: &'a OptConfig) -> Self {
        let approx = cfg.measure == MeasureMode::Auto && problem.metadata.gradient.is_none();
        Self {
            problem,
            cfg,
            approx,
            metric_obj: problem.objective.fresh(),
            metric_rng: RngStream::substream(cfg.seed, 1),
        }
    }

    fn online(&self, x: &DenseVector, batch: &[usize]) -> Result<(f64, Option<f64>)> {
        let obj = &self.problem.objective;
        let mut acc = 0.0;
        for &xi in batch {
            acc += obj.evaluate_uncounted(x, xi)?;
        }
        let online = acc / batch.len() as f64;
        let comparator = match &self.problem.metadata.comparator {
            Some(c) => {
                let mut acc = 0.0;
                for &xi in batch {
                    acc += obj.evaluate_uncounted(c, xi)?;
                }
                Some(acc / batch.len() as f64)
            }
            None => None,
        };
        Ok((online, comparator))
    }

    fn reference_gradient(&mut self, x: &DenseVector) -> Result<Option<DenseVector>> {
        if let Some(g) = self.problem.metadata.analytic_gradient(x) {
            return Ok(Some(g));
        }
        if !self.approx {
            return Ok(None);
        }
        let n = self.metric_obj.sample_space().size();
        let batch: Vec<usize> = (0..n).collect();
        let mu = self.cfg.estimator.mu.clamp(MU_FLOOR, 1e-3);
        averaged_on_batch(
            &self.metric_obj,
            x,
            mu,
            &batch,
            APPROX_MEASURE_Q,
            Directions::Sphere,
            &mut self.metric_rng,
        )
        .map(Some)
    }

    fn record(
        &mut self,
        iter: usize,
        queries: u64,
        x: &DenseVector,
        state: &AdaMMState,
        alpha_t: f64,
    ) -> Result<TraceRecord> {
        let loss = self.problem.objective.full_loss(x)?;
        let (measure_m, grad_norm_sq) = if self.cfg.measure == MeasureMode::Off {
            (None, None)
        } else {
            match self.reference_gradient(x)? {
                Some(g) => {
                    let metric = if self.cfg.algorithm == Algorithm::ZoAdaMM
                        && !self.cfg.euclidean_projection_override
                    {
                        state.metric()
                    } else {
                        DiagonalMetric::unit(x.dim())
                    };
                    let m = mahalanobis_measure(&self.problem.constraint, &metric, x, &g, alpha_t)?;
                    (Some(m), Some(g.norm_sq()))
                }
                None => (None, None),
            }
        };
        let (distortion, success) = match &self.problem.attack {
            Some(a) => (Some(a.distortion(x.as_slice())), a.all_fooled(x.as_slice())),
            None => (None, false),
        };
        Ok(TraceRecord {
            iter: iter as u64,
            queries,
            loss,
            measure_m,
            grad_norm_sq,
            distortion,
            success,
        })
    }
}

/// `sign(g)` with `sign(0) = 0`, exposed for reduction checks.
pub fn sign_direction(g: &DenseVector) -> DenseVector {
    g.map(sign0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_counterexample_lp, make_quadratic};

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn adamm_single_step_matches_hand_recurrence() {
        let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
        cfg.alpha = 0.1;
        let state = AdaMMState::new(1, 1e-5, 1e-5);
        let (s, x) = zo_adamm_step(
            &state,
            &v(&[0.0]),
            &v(&[2.0]),
            &cfg,
            &ConstraintSet::Unconstrained,
        )
        .unwrap();
        // m = 0.1*2, v = 0.3e-5 + 0.7*4, alpha_1 = 0.1
        assert!((s.m[0] - 0.2).abs() < 1e-12);
        assert!((s.v[0] - 2.800003).abs() < 1e-12);
        assert!((s.v_hat[0] - 2.800003).abs() < 1e-12);
        assert!((x[0] + 0.02 / 2.800003f64.sqrt()).abs() < 1e-12, "{}", x[0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adamm_reduces_to_sgd_step() {
        let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
        cfg.beta1 = 0.0;
        cfg.beta2 = 1.0;
        cfg.v0 = 1.0;
        cfg.vhat0 = 1.0;
        let state = AdaMMState::new(3, 1.0, 1.0);
        let x = v(&[0.3, -0.2, 1.0]);
        let g = v(&[1.5, -0.25, 4.0]);
        let (_, next) = zo_adamm_step(&state, &x, &g, &cfg, &ConstraintSet::Unconstrained).unwrap();
        assert_eq!(next, x.add_scaled(-cfg.alpha, &g));
    }

    #[test]
    fn adamm_reduces_to_sign_direction() {
        let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
        cfg.beta1 = 0.0;
        cfg.beta2 = 0.0;
        cfg.use_vhat_max = false;
        let state = AdaMMState::new(4, 1e-5, 1e-5);
        let g = v(&[3.7, -1e-3, 0.0, -250.0]);
        let step = adamm_update(
            &state,
            &DenseVector::zeros(4),
            &g,
            0.1,
            0.0,
            &cfg,
            &ConstraintSet::Unconstrained,
        )
        .unwrap();
        assert_eq!(step.direction, v(&[1.0, -1.0, 0.0, -1.0]));
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let cfg = OptConfig::new(Algorithm::ZoAdaMM);
        let mut state = AdaMMState::new(1, 1e-5, 1e-5);
        state.t = 6;
        let g = DenseVector::from_raw(vec![f64::NAN]);
        match zo_adamm_step(&state, &v(&[0.0]), &g, &cfg, &ConstraintSet::Unconstrained) {
            Err(ZoError::Numeric { iteration, .. }) => assert_eq!(iteration, Some(7)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sgd_and_sign_steps() {
        let set = ConstraintSet::Unconstrained;
        let x = v(&[1.0, 2.0]);
        assert_eq!(
            zo_sgd_step(&x, &DenseVector::zeros(2), 0.5, &set, false).unwrap(),
            x
        );
        assert_eq!(
            zo_signsgd_step(&x, &DenseVector::zeros(2), 0.5, &set, false).unwrap(),
            x
        );
        assert_eq!(
            zo_signsgd_step(&x, &v(&[0.3, 9.0]), 0.5, &set, false).unwrap(),
            v(&[0.5, 1.5])
        );
        let bx = ConstraintSet::new_box(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        assert!(zo_sgd_step(&x, &x, 0.1, &bx, false).is_err());
        let p = zo_sgd_step(&v(&[0.9, -0.9]), &v(&[-5.0, 5.0]), 0.1, &bx, true).unwrap();
        assert_eq!(p, v(&[1.0, -1.0]));
    }

    #[test]
    fn sign_step_stuck_on_counterexample() {
        let p = make_counterexample_lp();
        for alpha in [1e-4, 0.1, 1.0, 10.0] {
            let next =
                zo_signsgd_step(&p.initial, &v(&[-2.0, -1.0]), alpha, &p.constraint, true).unwrap();
            assert!(next.max_abs_diff(&p.initial) < 1e-12);
        }
    }

    #[test]
    fn smd_matches_psgd_and_schedule() {
        let bx = ConstraintSet::new_box(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        let x = v(&[0.2, 0.9]);
        let g = v(&[-1.0, -3.0]);
        assert_eq!(
            zo_smd_step(&x, &g, 0.2, &bx).unwrap(),
            zo_sgd_step(&x, &g, 0.2, &bx, true).unwrap()
        );
        let s = MuSchedule::InverseDt;
        assert_eq!(s.at(0.5, 1, 100, 5), 0.1);
        assert_eq!(s.at(0.5, 8, 100, 5), 0.5 * s.at(0.5, 4, 100, 5));
        assert_eq!(MuSchedule::Constant.at(1e-12, 1, 1, 1), MU_FLOOR);
    }

    #[test]
    fn scd_moves_only_sampled_coordinates() {
        let x = v(&[1.0, 2.0, 3.0]);
        assert_eq!(zo_scd_step(&x, &DenseVector::zeros(3), 0.1).unwrap(), x);
        let next = zo_scd_step(&x, &v(&[0.0, 4.0, 0.0]), 0.25).unwrap();
        assert_eq!(next, v(&[1.0, 1.0, 3.0]));
    }

    #[test]
    fn budget_below_cost_is_config_error() {
        let p = make_quadratic(4, 1.0, 1).unwrap();
        let cfg = OptConfig::new(Algorithm::ZoAdaMM);
        match run_optimizer(&p, &cfg, 10) {
            Err(ZoError::Config { key, .. }) => assert_eq!(key, "query_budget"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unconstrained_method_on_constrained_problem_is_rejected() {
        let p = make_counterexample_lp();
        for alg in [Algorithm::ZoSgd, Algorithm::ZoSignSgd, Algorithm::ZoScd] {
            assert!(matches!(
                run_optimizer(&p, &OptConfig::new(alg), 1000),
                Err(ZoError::Config { .. })
            ));
        }
    }

    #[test]
    fn budget_accounting_is_tight() {
        let p = make_quadratic(5, 2.0, 3).unwrap();
        for alg in Algorithm::ALL {
            let cfg = OptConfig::new(alg);
            let cost = cfg.queries_per_iteration(5);
            let budget = 1_003;
            let tr = run_optimizer(&p, &cfg, budget).unwrap();
            assert!(tr.total_queries <= budget, "{alg:?}");
            assert!(tr.total_queries + cost > budget, "{alg:?}");
            assert!(tr.random_iterate >= 1 && tr.random_iterate <= tr.iterations);
            for w in tr.records.windows(2) {
                assert!(w[1].queries > w[0].queries);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = make_quadratic(6, 3.0, 5).unwrap();
        let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
        cfg.seed = 17;
        let a = run_optimizer(&p, &cfg, 5_000).unwrap();
        let b = run_optimizer(&p, &cfg, 5_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn numeric_failure_keeps_partial_trace() {
        use crate::oracle::StochasticObjective;
        let base = make_quadratic(2, 1.0, 1).unwrap();
        let objective = StochasticObjective::deterministic(2, |x| {
            if x[0] < -0.05 {
                f64::NAN
            } else {
                (x[0] + 1.0).powi(2) + x[1] * x[1]
            }
        })
        .unwrap();
        let p = ProblemSpec { objective, ..base };
        let mut cfg = OptConfig::new(Algorithm::ZoSgd);
        cfg.alpha = 0.05;
        cfg.alpha_schedule = StepSchedule::Constant;
        let tr = run_optimizer(&p, &cfg, 10_000).unwrap();
        assert!(tr.aborted.is_some());
        assert!(tr.iterations < 10_000 / 11);
        assert!(!tr.records.is_empty());
    }
}
