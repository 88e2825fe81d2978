//! Seeded property suites: smoothing bounds, estimator statistics, projection
//! geometry and optimizer reductions. Each check reports its measured value
//! against the bound it is held to.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};
use crate::estimators::{
    averaged_on_batch, effective_mu, estimate_on_batch, two_point_along, Directions,
    EstimatorConfig, EstimatorKind, MU_FLOOR,
};
use crate::geometry::{
    gradient_mapping, project_euclidean, project_mahalanobis, vi_violation, ConstraintSet,
    DiagonalMetric,
};
use crate::numkit::{
    sample_unit_ball, sample_unit_sphere, sign0, DenseVector, RngStream, RunningStats, VectorStats,
};
use crate::optimizers::{
    run_optimizer_observed, Algorithm, MuSchedule, OptConfig, StepSchedule,
};
use crate::problems::{
    logistic_data, make_counterexample_lp, make_logistic, make_nonconvex_with, make_quadratic,
    make_quadratic_finite_sum, quadratic_parts, NonconvexOptions, ProblemSpec,
};
use crate::smoothing::{
    analytic_smooth_quadratic, smooth_grad_mc_with_stderr, smooth_value_mc, SmoothingProbe,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AtMost,
    AtLeast,
    Holds,
}

/// Outcome of one property.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl PropertyCheck {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound,
            relation: Relation::AtMost,
            pass: measured <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            bound,
            relation: Relation::AtLeast,
            pass: measured >= bound,
        }
    }

    pub fn flag(name: impl Into<String>, holds: bool) -> Self {
        Self {
            name: name.into(),
            measured: if holds { 1.0 } else { 0.0 },
            bound: 1.0,
            relation: Relation::Holds,
            pass: holds,
        }
    }
}

impl fmt::Display for PropertyCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match self.relation {
            Relation::AtMost => write!(
                f,
                "{verdict} {}: measured {:.6e} <= bound {:.6e}",
                self.name, self.measured, self.bound
            ),
            Relation::AtLeast => write!(
                f,
                "{verdict} {}: measured {:.6e} >= bound {:.6e}",
                self.name, self.measured, self.bound
            ),
            Relation::Holds => write!(f, "{verdict} {}", self.name),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Smoothing,
    Estimators,
    Geometry,
    Reductions,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "smoothing" => Some(Suite::Smoothing),
            "estimators" => Some(Suite::Estimators),
            "geometry" => Some(Suite::Geometry),
            "reductions" => Some(Suite::Reductions),
            "all" => Some(Suite::All),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Smoothing => "smoothing",
            Suite::Estimators => "estimators",
            Suite::Geometry => "geometry",
            Suite::Reductions => "reductions",
            Suite::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Floor applied to the smoothing radius inside the probes. The bounds
    /// are always evaluated at the nominal radius, so raising the floor makes
    /// the smoothing suite fail.
    pub mu_floor: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            seed: 2019,
            mu_floor: MU_FLOOR,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &ValidateOptions) -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Smoothing | Suite::All) {
        out.extend(smoothing_bound_checks(opts, 20, 100_000)?);
    }
    if matches!(suite, Suite::Estimators | Suite::All) {
        out.extend(estimator_unbiasedness(200_000, opts.seed)?);
        out.extend(variance_scaling_q(10_000, opts.seed)?);
        out.extend(variance_scaling_b(20_000, opts.seed)?);
        out.extend(sphere_concentration(100, 100_000, opts.seed)?);
        out.extend(query_accounting(opts.seed)?);
    }
    if matches!(suite, Suite::Geometry | Suite::All) {
        out.extend(geometry_checks(opts.seed)?);
    }
    if matches!(suite, Suite::Reductions | Suite::All) {
        out.extend(reduction_checks(opts.seed)?);
    }
    Ok(out)
}

/// A random point of the ball `|x - center| <= radius`.
fn ball_point(center: &DenseVector, radius: f64, rng: &mut RngStream) -> Result<DenseVector> {
    Ok(center.add_scaled(radius, &sample_unit_ball(center.dim(), rng)?))
}

struct BoundResidual {
    value_mc: f64,
    value_se: f64,
    grad_err: f64,
    grad_se: f64,
    second_moment: f64,
    second_moment_se: f64,
}

fn bound_residuals(
    p: &ProblemSpec,
    x: &DenseVector,
    xi: usize,
    mu: f64,
    mu_floor: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<(BoundResidual, f64, DenseVector)> {
    let d = x.dim();
    let obj = &p.objective;
    let fx = obj.evaluate_uncounted(x, xi)?;
    let grad = p
        .metadata
        .analytic_sample_gradient(x, xi)
        .ok_or_else(|| ZoError::Unsupported(format!("{} has no sample gradient", p.tag)))?;

    let probe = SmoothingProbe {
        mu,
        samples,
        seed: rng.next_u64(),
        mu_floor,
    };
    let (value_mc, value_se) = smooth_value_mc(obj, x, xi, &probe)?;
    let (grad_mc, grad_se) = smooth_grad_mc_with_stderr(obj, x, xi, &probe)?;

    let mu_eff = effective_mu(mu, mu_floor)?;
    let mut sq = RunningStats::new();
    for _ in 0..samples {
        let u = sample_unit_sphere(d, rng)?;
        sq.push(two_point_along(obj, x, xi, mu_eff, &u, d as f64)?.norm_sq());
    }
    let r = BoundResidual {
        value_mc,
        value_se,
        grad_err: grad_mc.sub(&grad).norm(),
        grad_se: grad_se.norm(),
        second_moment: sq.mean(),
        second_moment_se: sq.stderr(),
    };
    Ok((r, fx, grad))
}

/// Smoothing-radius bounds at `points` random points of a quadratic and a
/// logistic problem, each with 4 standard errors of Monte-Carlo slack:
///
/// * `|f_mu - f| <= L_c mu`
/// * `|f_mu - f| <= L_g mu^2 / 2`
/// * `|grad f_mu - grad f| <= mu d L_g / 2`
/// * `E |g_hat|^2 <= 2 d |grad f|^2 + mu^2 L_g^2 d^2 / 2`
///
/// Each check reports the worst ratio of residual to allowance.
pub fn smoothing_bound_checks(
    opts: &ValidateOptions,
    points: usize,
    samples: usize,
) -> Result<Vec<PropertyCheck>> {
    let mu = 0.05;
    let quad_d = 10;
    let quad = make_quadratic(quad_d, 4.0, opts.seed)?;
    let quad_center = quadratic_parts(quad_d, 4.0, 0, 0.0, opts.seed)?.minimizer;
    let logi = make_logistic(50, 10, opts.seed)?;
    let logi_data = logistic_data(50, 10, opts.seed)?;

    let mut rng = RngStream::substream(opts.seed, 11);
    let mut out = Vec::new();
    for (label, p) in [("quadratic", &quad), ("logistic", &logi)] {
        let lg = p.metadata.grad_lipschitz.expect("known L_g");
        let mut worst = [0.0_f64; 4];
        for k in 0..points {
            let (x, xi, lc) = if label == "quadratic" {
                // test points within distance 1 of x*, inside the radius-2 Lipschitz region
                (
                    ball_point(&quad_center, 1.0, &mut rng)?,
                    0,
                    p.metadata.lipschitz.expect("known L_c"),
                )
            } else {
                let xi = k % logi_data.labels.len();
                let lc = logi_data.features[xi].norm();
                (ball_point(&DenseVector::zeros(10), 3.0, &mut rng)?, xi, lc)
            };
            let d = x.dim() as f64;
            let (r, fx, grad) =
                bound_residuals(p, &x, xi, mu, opts.mu_floor, samples, &mut rng)?;
            let gap = (r.value_mc - fx).abs();
            let ratios = [
                gap / (lc * mu + 4.0 * r.value_se),
                gap / (lg * mu * mu / 2.0 + 4.0 * r.value_se),
                r.grad_err / (mu * d * lg / 2.0 + 4.0 * r.grad_se),
                r.second_moment
                    / (2.0 * d * grad.norm_sq()
                        + mu * mu * lg * lg * d * d / 2.0
                        + 4.0 * r.second_moment_se),
            ];
            for (w, v) in worst.iter_mut().zip(ratios) {
                *w = w.max(v);
            }
        }
        let names = [
            "value gap within L_c mu",
            "value gap within L_g mu^2/2",
            "gradient gap within mu d L_g/2",
            "second moment within 2d|grad|^2 + mu^2 L_g^2 d^2/2",
        ];
        for (name, w) in names.iter().zip(worst) {
            out.push(PropertyCheck::at_most(
                format!("smoothing/{label}: {name} (worst residual/allowance)"),
                w,
                1.0,
            ));
        }
    }
    Ok(out)
}

/// Mean of `samples` two-point estimates on the d = 10 quadratic against the
/// closed-form smoothed gradient; reports the largest per-coordinate z-score.
pub fn estimator_unbiasedness(samples: usize, seed: u64) -> Result<Vec<PropertyCheck>> {
    let d = 10;
    let p = make_quadratic(d, 4.0, seed)?;
    let parts = quadratic_parts(d, 4.0, 0, 0.0, seed)?;
    let mut rng = RngStream::substream(seed, 21);
    let x = ball_point(&parts.minimizer, 1.0, &mut rng)?;
    let mu = 0.05;
    // 1/2 sum A_i (x_i - x*_i)^2 = 1/2 sum A_i x_i^2 - (A x*) . x + const
    let b = parts.curvature.hadamard(&parts.minimizer).scale(-1.0);
    let (_, reference) = analytic_smooth_quadratic(&parts.curvature, &b, &x, mu)?;
    let mut stats = VectorStats::new(d);
    for _ in 0..samples {
        let u = sample_unit_sphere(d, &mut rng)?;
        stats.push(&two_point_along(&p.objective, &x, 0, mu, &u, d as f64)?);
    }
    let mean = stats.mean();
    let se = stats.stderr();
    let mut worst = 0.0_f64;
    for i in 0..d {
        worst = worst.max((mean[i] - reference[i]).abs() / se[i]);
    }
    Ok(vec![PropertyCheck::at_most(
        format!("estimators: two-point mean vs smoothed gradient, {samples} draws (max z-score)"),
        worst,
        4.0,
    )])
}

/// Total variance of `estimate` over `draws` calls.
fn total_variance(draws: usize, mut estimate: impl FnMut() -> Result<DenseVector>) -> Result<f64> {
    let first = estimate()?;
    let mut stats = VectorStats::new(first.dim());
    stats.push(&first);
    for _ in 1..draws {
        stats.push(&estimate()?);
    }
    Ok(stats.total_variance())
}

fn halving_checks(label: &str, axis: &str, levels: &[usize], vars: &[f64]) -> Vec<PropertyCheck> {
    levels
        .windows(2)
        .zip(vars.windows(2))
        .map(|(l, v)| {
            let ratio = v[0] / v[1];
            PropertyCheck::at_most(
                format!(
                    "estimators/{label}: variance ratio {axis}={} -> {} is {ratio:.4} (|ratio/2 - 1|)",
                    l[0], l[1]
                ),
                (ratio / 2.0 - 1.0).abs(),
                0.25,
            )
        })
        .collect()
}

/// Direction-count leg: deterministic d = 50 quadratic away from its
/// minimizer, `q` in {1, 2, 4, 8}.
pub fn variance_scaling_q(draws: usize, seed: u64) -> Result<Vec<PropertyCheck>> {
    let d = 50;
    let p = make_quadratic(d, 2.0, seed)?;
    let x = DenseVector::zeros(d);
    let levels = [1, 2, 4, 8];
    let mut vars = Vec::new();
    for &q in &levels {
        let mut rng = RngStream::substream(seed, 31 + q as u64);
        vars.push(total_variance(draws, || {
            averaged_on_batch(&p.objective, &x, 1e-3, &[0], q, Directions::Sphere, &mut rng)
        })?);
    }
    Ok(halving_checks("deterministic d=50", "q", &levels, &vars))
}

/// Minibatch leg: finite-sum quadratic at its minimizer with `q = 20`,
/// `b` in {1, 2, 4, 8}.
pub fn variance_scaling_b(draws: usize, seed: u64) -> Result<Vec<PropertyCheck>> {
    let (d, n) = (10, 200);
    let p = make_quadratic_finite_sum(d, 2.0, n, 1.0, seed)?;
    let x = quadratic_parts(d, 2.0, n, 1.0, seed)?.minimizer;
    let levels = [1, 2, 4, 8];
    let mut vars = Vec::new();
    for &b in &levels {
        let mut rng = RngStream::substream(seed, 41 + b as u64);
        vars.push(total_variance(draws, || {
            let batch = p.objective.sample_minibatch(b, &mut rng)?;
            averaged_on_batch(&p.objective, &x, 1e-4, &batch, 20, Directions::Sphere, &mut rng)
        })?);
    }
    Ok(halving_checks("finite-sum q=20", "b", &levels, &vars))
}

/// `P[|u_i| >= sqrt(xi/d)] <= exp((1 - xi + ln xi)/2)` for sphere draws,
/// pooled over coordinates.
pub fn sphere_concentration(d: usize, draws: usize, seed: u64) -> Result<Vec<PropertyCheck>> {
    let levels = [4.0_f64, 8.0, 16.0];
    let thresholds: Vec<f64> = levels.iter().map(|l| (l / d as f64).sqrt()).collect();
    let mut hits = [0u64; 3];
    let mut rng = RngStream::substream(seed, 51);
    for _ in 0..draws {
        let u = sample_unit_sphere(d, &mut rng)?;
        for v in u.iter() {
            for (h, t) in hits.iter_mut().zip(&thresholds) {
                if v.abs() >= *t {
                    *h += 1;
                }
            }
        }
    }
    let total = (draws * d) as f64;
    Ok(levels
        .iter()
        .zip(hits)
        .map(|(&l, h)| {
            PropertyCheck::at_most(
                format!("estimators: sphere tail frequency at xi={l}"),
                h as f64 / total,
                ((1.0 - l + l.ln()) / 2.0).exp(),
            )
        })
        .collect())
}

/// Every estimator kind consumes exactly its stated number of queries.
pub fn query_accounting(seed: u64) -> Result<Vec<PropertyCheck>> {
    let d = 7;
    let p = make_quadratic_finite_sum(d, 2.0, 30, 1.0, seed)?;
    let x = DenseVector::filled(d, 0.3);
    let mut out = Vec::new();
    for kind in [
        EstimatorKind::UniformTwoPoint,
        EstimatorKind::Coordinate,
        EstimatorKind::NesAntithetic,
    ] {
        for (b, q) in [(1, 1), (3, 4), (2, 10)] {
            let cfg = EstimatorConfig {
                b,
                q,
                kind,
                ..EstimatorConfig::default()
            };
            let obj = p.objective.fresh();
            let mut rng = RngStream::new(seed);
            let batch = obj.sample_minibatch(b, &mut rng)?;
            estimate_on_batch(&obj, &x, &batch, &cfg, cfg.mu, &mut rng)?;
            let expected = cfg.queries_per_call(d);
            out.push(PropertyCheck::flag(
                format!(
                    "estimators: {} b={b} q={q} uses {expected} queries (counted {})",
                    kind.name(),
                    obj.queries()
                ),
                obj.queries() == expected,
            ));
        }
    }
    Ok(out)
}

fn random_metric(d: usize, rng: &mut RngStream) -> DiagonalMetric {
    let h = (0..d).map(|_| 0.1 + 9.9 * rng.next_f64()).collect();
    DiagonalMetric::new(DenseVector::from_raw(h)).expect("positive weights")
}

fn random_vec(d: usize, scale: f64, rng: &mut RngStream) -> DenseVector {
    DenseVector::from_raw((0..d).map(|_| scale * (2.0 * rng.next_f64() - 1.0)).collect())
}

fn random_set(kind: usize, d: usize, rng: &mut RngStream) -> ConstraintSet {
    match kind {
        0 => {
            let c = random_vec(d, 1.0, rng);
            let w = DenseVector::from_raw((0..d).map(|_| 0.05 + rng.next_f64()).collect());
            ConstraintSet::new_box(c.sub(&w), c.add(&w)).expect("ordered bounds")
        }
        1 => ConstraintSet::symmetric_band(random_vec(d, 1.0, rng), 0.1 + rng.next_f64())
            .expect("valid band"),
        _ => ConstraintSet::l2_ball(random_vec(d, 1.0, rng), 0.2 + rng.next_f64())
            .expect("valid ball"),
    }
}

/// Weighted projection onto `{a.x = t}` by exact cyclic coordinate descent
/// over all coordinates but the pivot, which is eliminated by the constraint.
fn brute_force_hyperplane(a: &DenseVector, t: f64, h: &DenseVector, y: &DenseVector) -> DenseVector {
    let d = y.dim();
    let k = (0..d)
        .max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()))
        .expect("d >= 1");
    let mut z: Vec<f64> = y.as_slice().to_vec();
    let pivot = |z: &[f64]| {
        let mut s = t;
        for i in 0..d {
            if i != k {
                s -= a[i] * z[i];
            }
        }
        s / a[k]
    };
    for _ in 0..20_000 {
        let mut change = 0.0_f64;
        for j in 0..d {
            if j == k {
                continue;
            }
            // residual of the pivot coordinate with z_j removed
            let r = pivot(&z) + a[j] / a[k] * z[j] - y[k];
            let c = a[j] / a[k];
            let new = (h[j] * y[j] + h[k] * c * r) / (h[j] + h[k] * c * c);
            change = change.max((new - z[j]).abs());
            z[j] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    z[k] = pivot(&z);
    DenseVector::from_raw(z)
}

/// Weighted minimizer over `|a.x| <= b` by comparing `y` itself and both
/// boundary hyperplanes.
fn brute_force_band(a: &DenseVector, b: f64, h: &DenseVector, y: &DenseVector) -> DenseVector {
    if a.dot(y).abs() <= b {
        return y.clone();
    }
    let metric = DiagonalMetric::new(h.clone()).expect("positive weights");
    let lo = brute_force_hyperplane(a, -b, h, y);
    let hi = brute_force_hyperplane(a, b, h, y);
    if metric.distance_sq(&lo, y) <= metric.distance_sq(&hi, y) {
        lo
    } else {
        hi
    }
}

/// Projection oracles: band vs brute force, box vs clamp, idempotence,
/// feasibility, unit-metric reduction and the stationarity construction.
pub fn geometry_checks(seed: u64) -> Result<Vec<PropertyCheck>> {
    let mut rng = RngStream::substream(seed, 61);
    let mut out = Vec::new();

    // band against the coordinate-descent oracle and a dense feasible sample
    let mut worst_brute = 0.0_f64;
    let mut worst_sample = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = 1 + rng.below(5);
        let a = random_vec(d, 1.0, &mut rng);
        let b = 0.1 + rng.next_f64();
        let set = ConstraintSet::symmetric_band(a.clone(), b)?;
        let metric = random_metric(d, &mut rng);
        let y = random_vec(d, 3.0, &mut rng);
        let p = project_mahalanobis(&set, &metric, &y)?;
        let oracle = brute_force_band(&a, b, metric.weights(), &y);
        worst_brute = worst_brute.max(p.max_abs_diff(&oracle));
        let dp = metric.distance_sq(&p, &y);
        for _ in 0..200 {
            let mut s = p.add(&random_vec(d, 0.5, &mut rng));
            let t = a.dot(&s);
            if t.abs() > b {
                s = s.add_scaled(-(t - t.signum() * b) / a.norm_sq(), &a);
            }
            if set.contains(&s, 0.0) {
                worst_sample = worst_sample.max(dp - metric.distance_sq(&s, &y));
            }
        }
    }
    out.push(PropertyCheck::at_most(
        "geometry: weighted band projection vs brute-force minimizer (max coord diff)",
        worst_brute,
        1e-6,
    ));
    out.push(PropertyCheck::at_most(
        "geometry: weighted band projection beats feasible samples (max excess distance)",
        worst_sample,
        1e-9,
    ));

    // box: weighted projection is the clamp, bit for bit
    let mut box_exact = true;
    for _ in 0..1000 {
        let d = 1 + rng.below(8);
        let set = random_set(0, d, &mut rng);
        let (lo, hi) = match &set {
            ConstraintSet::Box { lo, hi } => (lo.clone(), hi.clone()),
            _ => unreachable!(),
        };
        let y = random_vec(d, 3.0, &mut rng);
        let p = project_mahalanobis(&set, &random_metric(d, &mut rng), &y)?;
        for i in 0..d {
            let c = if y[i] < lo[i] {
                lo[i]
            } else if y[i] > hi[i] {
                hi[i]
            } else {
                y[i]
            };
            box_exact &= p[i].to_bits() == c.to_bits();
        }
    }
    out.push(PropertyCheck::flag(
        "geometry: weighted box projection equals clamp exactly (1000 instances)",
        box_exact,
    ));

    // idempotence, feasibility and unit-metric reduction over all set kinds
    let mut worst_idem = 0.0_f64;
    let mut all_feasible = true;
    let mut worst_unit = 0.0_f64;
    for k in 0..1000 {
        let d = 1 + rng.below(8);
        let set = random_set(k % 3, d, &mut rng);
        let metric = random_metric(d, &mut rng);
        let y = random_vec(d, 3.0, &mut rng);
        let pe = project_euclidean(&set, &y)?;
        let pm = project_mahalanobis(&set, &metric, &y)?;
        worst_idem = worst_idem
            .max(project_euclidean(&set, &pe)?.max_abs_diff(&pe))
            .max(project_mahalanobis(&set, &metric, &pm)?.max_abs_diff(&pm));
        all_feasible &= set.contains(&pe, 1e-12) && set.contains(&pm, 1e-12);
        let pu = project_mahalanobis(&set, &DiagonalMetric::unit(d), &y)?;
        worst_unit = worst_unit.max(pu.max_abs_diff(&pe));
    }
    out.push(PropertyCheck::at_most(
        "geometry: projection idempotence, both metrics (max coord diff)",
        worst_idem,
        1e-12,
    ));
    out.push(PropertyCheck::flag(
        "geometry: projected points feasible within 1e-12 (1000 instances)",
        all_feasible,
    ));
    out.push(PropertyCheck::at_most(
        "geometry: unit-metric weighted projection equals Euclidean (max coord diff)",
        worst_unit,
        1e-12,
    ));

    // with h = |grad|, a zero gradient mapping on the counterexample certifies VI stationarity
    let p = make_counterexample_lp();
    let grad = p.metadata.analytic_gradient(&p.initial).expect("gradient");
    let metric = DiagonalMetric::new(grad.map(f64::abs))?;
    let mut worst_vi = f64::INFINITY;
    let mut fixed_points = 0;
    for _ in 0..200 {
        let x = {
            let s = random_vec(2, 2.0, &mut rng);
            project_euclidean(&p.constraint, &s)?
        };
        let pmap = gradient_mapping(&p.constraint, &metric, &x, &grad, 0.5)?;
        if pmap.norm() <= 1e-12 {
            fixed_points += 1;
            for _ in 0..50 {
                let t = project_euclidean(&p.constraint, &random_vec(2, 3.0, &mut rng))?;
                worst_vi = worst_vi.min(vi_violation(&grad, &x, &t)?);
            }
        }
    }
    // the LP has no stationary point, so no sampled point may be a fixed point
    out.push(PropertyCheck::flag(
        format!("geometry: weighted fixed points on the counterexample satisfy the VI ({fixed_points} found)"),
        fixed_points == 0 || worst_vi >= -1e-9,
    ));
    let at_start = gradient_mapping(&p.constraint, &metric, &p.initial, &grad, 0.5)?;
    out.push(PropertyCheck::at_least(
        "geometry: weighted gradient mapping at [0.5, 0.5] is non-zero (norm)",
        at_start.norm(),
        1e-6,
    ));
    Ok(out)
}

fn trajectory(p: &ProblemSpec, cfg: &OptConfig, iterations: usize) -> Result<Vec<DenseVector>> {
    let budget = cfg.queries_per_iteration(p.dim()) * iterations as u64;
    let mut xs = Vec::with_capacity(iterations);
    let trace = run_optimizer_observed(p, cfg, budget, |e| xs.push(e.next.clone()))?;
    if let Some(msg) = trace.aborted {
        return Err(ZoError::numeric(msg));
    }
    Ok(xs)
}

/// Reduction equivalences and run-loop invariants.
pub fn reduction_checks(seed: u64) -> Result<Vec<PropertyCheck>> {
    let mut out = Vec::new();
    let iterations = 500;
    let quad = make_quadratic(10, 5.0, seed)?;

    let mut sgd = OptConfig::new(Algorithm::ZoSgd);
    sgd.seed = seed;
    sgd.alpha = 0.02;
    let mut adamm = OptConfig::new(Algorithm::ZoAdaMM);
    adamm.seed = seed;
    adamm.alpha = sgd.alpha;
    adamm.alpha_schedule = sgd.alpha_schedule;
    adamm.mu_schedule = MuSchedule::Constant;
    adamm.estimator = sgd.estimator.clone();
    adamm.beta1 = 0.0;
    adamm.beta2 = 1.0;
    adamm.v0 = 1.0;
    adamm.vhat0 = 1.0;
    let a = trajectory(&quad, &adamm, iterations)?;
    let s = trajectory(&quad, &sgd, iterations)?;
    let worst = a
        .iter()
        .zip(&s)
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max);
    out.push(PropertyCheck::at_most(
        format!("reductions: AdaMM(0, 1, v0 = 1) matches ZO-SGD over {} iterations (max diff)", a.len().min(s.len())),
        if a.len() == iterations && s.len() == iterations {
            worst
        } else {
            f64::INFINITY
        },
        1e-12,
    ));

    for (label, p) in [
        ("quadratic", make_quadratic(10, 5.0, seed)?),
        (
            "boxed nonconvex",
            make_nonconvex_with(8, seed, NonconvexOptions {
                boxed: true,
                ..NonconvexOptions::default()
            })?,
        ),
    ] {
        let mut sign = OptConfig::new(Algorithm::ZoAdaMM);
        sign.seed = seed;
        sign.beta1 = 0.0;
        sign.beta2 = 0.0;
        sign.use_vhat_max = false;
        sign.alpha_schedule = StepSchedule::InverseSqrt;
        let budget = sign.queries_per_iteration(p.dim()) * iterations as u64;
        let mut exact = true;
        let mut steps = 0;
        run_optimizer_observed(&p, &sign, budget, |e| {
            steps += 1;
            for i in 0..e.g_hat.dim() {
                exact &= e.direction[i].to_bits() == sign0(e.g_hat[i]).to_bits();
            }
        })?;
        out.push(PropertyCheck::flag(
            format!("reductions: AdaMM(0, 0, no max) direction equals sign(g) on {label} ({steps} iterations)"),
            exact && steps == iterations,
        ));
    }

    // v_hat monotone and iterates feasible on constrained problems
    for (label, p) in [
        ("logistic ball", make_logistic(100, 10, seed)?),
        (
            "boxed nonconvex",
            make_nonconvex_with(8, seed, NonconvexOptions {
                boxed: true,
                ..NonconvexOptions::default()
            })?,
        ),
    ] {
        let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
        cfg.seed = seed;
        cfg.alpha = 0.2;
        let budget = cfg.queries_per_iteration(p.dim()) * 1000;
        let mut prev: Option<DenseVector> = None;
        let mut monotone = true;
        let mut feasible = true;
        run_optimizer_observed(&p, &cfg, budget, |e| {
            let v_hat = &e.state.expect("adamm state").v_hat;
            if let Some(pv) = &prev {
                monotone &= (0..v_hat.dim()).all(|i| v_hat[i] >= pv[i]);
            }
            prev = Some(v_hat.clone());
            feasible &= p.constraint.contains(e.next, 1e-12);
        })?;
        out.push(PropertyCheck::flag(
            format!("reductions: v_hat non-decreasing on {label}"),
            monotone,
        ));
        out.push(PropertyCheck::flag(
            format!("reductions: iterates feasible within 1e-12 on {label}"),
            feasible,
        ));
    }

    // budget accounting for every method
    let mut tight = true;
    for alg in Algorithm::ALL {
        let mut cfg = OptConfig::new(alg);
        cfg.seed = seed;
        let cost = cfg.queries_per_iteration(quad.dim());
        let budget = 2_017;
        let tr = crate::optimizers::run_optimizer(&quad, &cfg, budget)?;
        tight &= tr.total_queries <= budget && tr.total_queries + cost > budget;
    }
    out.push(PropertyCheck::flag(
        "reductions: every method spends between budget - cost + 1 and budget queries",
        tight,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_display() {
        let c = PropertyCheck::at_most("x", 0.5, 1.0);
        assert!(c.pass && c.to_string().starts_with("PASS x"));
        assert!(!PropertyCheck::at_least("y", 0.5, 1.0).pass);
        assert!(PropertyCheck::flag("z", false).to_string().starts_with("FAIL"));
    }

    #[test]
    fn suite_names() {
        for s in ["smoothing", "estimators", "geometry", "reductions", "all"] {
            assert_eq!(Suite::parse(s).unwrap().name(), s);
        }
        assert!(Suite::parse("everything").is_none());
    }

    #[test]
    fn brute_force_matches_closed_form_on_one_instance() {
        let a = DenseVector::new(vec![1.0, 2.0, -0.5]).unwrap();
        let h = DenseVector::new(vec![2.0, 0.5, 3.0]).unwrap();
        let y = DenseVector::new(vec![2.0, 1.0, 0.0]).unwrap();
        let set = ConstraintSet::symmetric_band(a.clone(), 1.0).unwrap();
        let p = project_mahalanobis(&set, &DiagonalMetric::new(h.clone()).unwrap(), &y).unwrap();
        let o = brute_force_band(&a, 1.0, &h, &y);
        assert!(p.max_abs_diff(&o) < 1e-9, "{p:?} vs {o:?}");
    }
}
