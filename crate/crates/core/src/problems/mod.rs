//! Test problems: synthetic convex and nonconvex objectives, the
//! sign-method counterexample, and the small black-box attack family.

mod attack;
mod mlp;

use std::sync::Arc;

pub use attack::{
    cw_loss, make_attack_problem, seeded_victim, tanh_reparam, victim_inputs, victim_model,
    AttackMode, AttackProblem, DEFAULT_LAMBDA, TANH_SHRINK, VICTIM_SEED,
};
pub use mlp::{mlp_forward, DenseLayer, TinyMlp};

use crate::error::{Result, ZoError};
use crate::geometry::ConstraintSet;
use crate::numkit::{DenseVector, RngStream};
use crate::oracle::{ProblemMetadata, SampleSpace, StochasticObjective};

/// An objective paired with its feasible set and reference data.
#[derive(Debug)]
pub struct ProblemSpec {
    pub objective: StochasticObjective,
    pub constraint: ConstraintSet,
    pub metadata: ProblemMetadata,
    pub initial: DenseVector,
    pub tag: String,
    /// Present for attack problems; supplies distortion and success tests.
    pub attack: Option<Arc<AttackProblem>>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn validated(self) -> Result<Self> {
        if self.initial.dim() != self.objective.dim() {
            return Err(ZoError::DimensionMismatch {
                expected: self.objective.dim(),
                got: self.initial.dim(),
            });
        }
        if !self.constraint.is_member(&self.initial) {
            return Err(ZoError::InvalidArgument(format!(
                "initial point of `{}` is infeasible",
                self.tag
            )));
        }
        Ok(self)
    }
}

/// `min -2 x1 - x2  s.t. |x1 + x2| <= 1`, started at `[0.5, 0.5]`.
pub fn make_counterexample_lp() -> ProblemSpec {
    let objective =
        StochasticObjective::deterministic(2, |x| -2.0 * x[0] - x[1]).expect("static dimension");
    let metadata = ProblemMetadata {
        lipschitz: Some(5f64.sqrt()),
        grad_lipschitz: Some(0.0),
        grad_bound: Some(2.0),
        gradient: Some(Arc::new(|_| vec![-2.0, -1.0])),
        sample_gradient: Some(Arc::new(|_, _| vec![-2.0, -1.0])),
        ..ProblemMetadata::default()
    };
    ProblemSpec {
        objective,
        constraint: ConstraintSet::symmetric_band(DenseVector::filled(2, 1.0), 1.0)
            .expect("valid band"),
        metadata,
        initial: DenseVector::filled(2, 0.5),
        tag: "counterexample-lp".into(),
        attack: None,
    }
}

/// Half-width of the box around the minimizer over which the quadratic's
/// `lipschitz` metadata is valid.
pub const QUADRATIC_LIPSCHITZ_RADIUS: f64 = 2.0;

/// Diagonal quadratic data shared by the deterministic and finite-sum variants.
#[derive(Clone, Debug)]
pub struct QuadraticData {
    pub curvature: DenseVector,
    pub minimizer: DenseVector,
    /// Per-sample linear shifts, exactly mean zero; empty when deterministic.
    pub shifts: Vec<DenseVector>,
}

fn quadratic_data(
    d: usize,
    condition: f64,
    samples: usize,
    shift_scale: f64,
    seed: u64,
) -> Result<QuadraticData> {
    if d == 0 {
        return Err(ZoError::InvalidDimension(0));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(ZoError::InvalidArgument(format!(
            "condition number must be >= 1, got {condition}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let curvature = DenseVector::from_raw(
        (0..d)
            .map(|i| {
                if d == 1 {
                    1.0
                } else {
                    condition.powf(i as f64 / (d - 1) as f64)
                }
            })
            .collect(),
    );
    let minimizer = DenseVector::from_raw((0..d).map(|_| 2.0 * rng.next_f64() - 1.0).collect());
    let mut shifts: Vec<DenseVector> = (0..samples)
        .map(|_| rng.normal_vector(d).scale(shift_scale))
        .collect();
    if !shifts.is_empty() {
        let mut mean = DenseVector::zeros(d);
        for s in &shifts {
            mean.axpy(1.0 / samples as f64, s);
        }
        for s in &mut shifts {
            *s = s.sub(&mean);
        }
    }
    Ok(QuadraticData {
        curvature,
        minimizer,
        shifts,
    })
}

/// `f(x) = 1/2 sum A_i (x_i - x*_i)^2`, `A` log-spaced in `[1, condition]`.
pub fn make_quadratic(d: usize, condition: f64, seed: u64) -> Result<ProblemSpec> {
    let data = quadratic_data(d, condition, 0, 0.0, seed)?;
    build_quadratic(data, condition, seed)
}

/// Finite-sum variant: `f(x; xi) = 1/2 sum A_i (x_i - x*_i)^2 + s_xi . (x - x*)`
/// with mean-zero shifts `s_xi ~ shift_scale * N(0, I)`.
pub fn make_quadratic_finite_sum(
    d: usize,
    condition: f64,
    samples: usize,
    shift_scale: f64,
    seed: u64,
) -> Result<ProblemSpec> {
    if samples == 0 {
        return Err(ZoError::InvalidArgument(
            "finite-sum quadratic needs n >= 1".into(),
        ));
    }
    let data = quadratic_data(d, condition, samples, shift_scale, seed)?;
    build_quadratic(data, condition, seed)
}

/// Recover the generating data of a quadratic (for oracles in tests and suites).
pub fn quadratic_parts(
    d: usize,
    condition: f64,
    samples: usize,
    shift_scale: f64,
    seed: u64,
) -> Result<QuadraticData> {
    quadratic_data(d, condition, samples, shift_scale, seed)
}

fn build_quadratic(data: QuadraticData, condition: f64, seed: u64) -> Result<ProblemSpec> {
    let d = data.curvature.dim();
    let n = data.shifts.len();
    let a = Arc::new(data.curvature.into_vec());
    let xs = Arc::new(data.minimizer.into_vec());
    let shifts: Arc<Vec<Vec<f64>>> =
        Arc::new(data.shifts.into_iter().map(|s| s.into_vec()).collect());

    let (fa, fx, fs) = (a.clone(), xs.clone(), shifts.clone());
    let eval = move |x: &[f64], xi: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let r = x[i] - fx[i];
            acc += 0.5 * fa[i] * r * r;
        }
        if let Some(s) = fs.get(xi) {
            for i in 0..x.len() {
                acc += s[i] * (x[i] - fx[i]);
            }
        }
        acc
    };
    let space = if n == 0 {
        SampleSpace::Deterministic
    } else {
        SampleSpace::Finite(n)
    };
    let objective = StochasticObjective::new(d, space, eval)?;

    let (ga, gx) = (a.clone(), xs.clone());
    let gradient =
        move |x: &[f64]| -> Vec<f64> { (0..x.len()).map(|i| ga[i] * (x[i] - gx[i])).collect() };
    let (sa, sx, ss) = (a.clone(), xs.clone(), shifts.clone());
    let sample_gradient = move |x: &[f64], xi: usize| -> Vec<f64> {
        (0..x.len())
            .map(|i| sa[i] * (x[i] - sx[i]) + ss.get(xi).map_or(0.0, |s| s[i]))
            .collect()
    };

    let a_norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max_shift = shifts
        .iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let metadata = ProblemMetadata {
        lipschitz: Some(QUADRATIC_LIPSCHITZ_RADIUS * a_norm + max_shift),
        grad_lipschitz: Some(condition),
        grad_bound: None,
        optimum_value: Some(0.0),
        gradient: Some(Arc::new(gradient)),
        sample_gradient: Some(Arc::new(sample_gradient)),
        comparator: Some(DenseVector::from_raw(xs.to_vec())),
    };
    ProblemSpec {
        objective,
        constraint: ConstraintSet::Unconstrained,
        metadata,
        initial: DenseVector::zeros(d),
        tag: if n == 0 {
            format!("quadratic-d{d}-c{condition}-s{seed}")
        } else {
            format!("quadratic-fs{n}-d{d}-c{condition}-s{seed}")
        },
        attack: None,
    }
    .validated()
}

/// Planted logistic-regression data.
#[derive(Clone, Debug)]
pub struct LogisticData {
    pub features: Vec<DenseVector>,
    pub labels: Vec<f64>,
    pub planted: DenseVector,
    pub radius: f64,
}

/// Norm of the planted weights; the feasible ball has radius 1.5 times this.
pub const LOGISTIC_PLANTED_NORM: f64 = 2.0;

pub fn logistic_data(n: usize, d: usize, seed: u64) -> Result<LogisticData> {
    if d == 0 {
        return Err(ZoError::InvalidDimension(0));
    }
    if n == 0 {
        return Err(ZoError::InvalidArgument(
            "logistic problem needs n >= 1".into(),
        ));
    }
    let mut rng = RngStream::new(seed);
    let planted = crate::numkit::sample_unit_sphere(d, &mut rng)?.scale(LOGISTIC_PLANTED_NORM);
    let features: Vec<DenseVector> = (0..n).map(|_| rng.normal_vector(d)).collect();
    let labels = features
        .iter()
        .map(|a| if a.dot(&planted) >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    Ok(LogisticData {
        features,
        labels,
        planted,
        radius: 1.5 * LOGISTIC_PLANTED_NORM,
    })
}

/// `f(x; xi) = log(1 + exp(-y_xi a_xi^T x))` over the ball `|x| <= R`.
pub fn make_logistic(n: usize, d: usize, seed: u64) -> Result<ProblemSpec> {
    let data = logistic_data(n, d, seed)?;
    let feats: Arc<Vec<Vec<f64>>> = Arc::new(
        data.features
            .iter()
            .map(|a| a.as_slice().to_vec())
            .collect(),
    );
    let labels = Arc::new(data.labels.clone());

    let (ef, el) = (feats.clone(), labels.clone());
    let objective = StochasticObjective::new(d, SampleSpace::Finite(n), move |x, xi| {
        let margin = el[xi] * dot(&ef[xi], x);
        softplus(-margin)
    })?;

    let (sf, sl) = (feats.clone(), labels.clone());
    let sample_grad = move |x: &[f64], xi: usize| -> Vec<f64> {
        let margin = sl[xi] * dot(&sf[xi], x);
        let w = -sl[xi] * sigmoid(-margin);
        sf[xi].iter().map(|a| w * a).collect()
    };
    let sample_grad = Arc::new(sample_grad);
    let full = {
        let sg = sample_grad.clone();
        move |x: &[f64]| -> Vec<f64> {
            let mut g = vec![0.0; x.len()];
            for xi in 0..n {
                for (gi, v) in g.iter_mut().zip(sg(x, xi)) {
                    *gi += v / n as f64;
                }
            }
            g
        }
    };

    let max_norm = data.features.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let max_inf = data
        .features
        .iter()
        .map(|a| a.norm_inf())
        .fold(0.0, f64::max);
    let metadata = ProblemMetadata {
        lipschitz: Some(max_norm),
        grad_lipschitz: Some(max_norm * max_norm / 4.0),
        grad_bound: Some(max_inf),
        optimum_value: None,
        gradient: Some(Arc::new(full)),
        sample_gradient: Some(sample_grad),
        comparator: Some(data.planted.clone()),
    };
    ProblemSpec {
        objective,
        constraint: ConstraintSet::l2_ball(DenseVector::zeros(d), data.radius)?,
        metadata,
        initial: DenseVector::zeros(d),
        tag: format!("logistic-n{n}-d{d}-s{seed}"),
        attack: None,
    }
    .validated()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonconvexOptions {
    pub epsilon: f64,
    pub omega: f64,
    /// Constrain to `[-1, 1]^d`.
    pub boxed: bool,
}

impl Default for NonconvexOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            omega: 2.0,
            boxed: false,
        }
    }
}

/// `f(x) = 1/2 |x - x*|^2 + eps sum sin(omega x_i)`, gradient-Lipschitz `1 + eps omega^2`.
pub fn make_nonconvex(d: usize, seed: u64) -> Result<ProblemSpec> {
    make_nonconvex_with(d, seed, NonconvexOptions::default())
}

pub fn make_nonconvex_with(d: usize, seed: u64, opts: NonconvexOptions) -> Result<ProblemSpec> {
    if d == 0 {
        return Err(ZoError::InvalidDimension(0));
    }
    let mut rng = RngStream::new(seed);
    let xs: Arc<Vec<f64>> = Arc::new((0..d).map(|_| 3.0 * rng.next_f64() - 1.5).collect());
    let NonconvexOptions {
        epsilon,
        omega,
        boxed,
    } = opts;

    let fx = xs.clone();
    let objective = StochasticObjective::deterministic(d, move |x| {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let r = x[i] - fx[i];
            acc += 0.5 * r * r + epsilon * (omega * x[i]).sin();
        }
        acc
    })?;
    let gx = xs.clone();
    let gradient = move |x: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] - gx[i] + epsilon * omega * (omega * x[i]).cos())
            .collect()
    };
    let gradient = Arc::new(gradient);
    let sg = gradient.clone();
    let metadata = ProblemMetadata {
        grad_lipschitz: Some(1.0 + epsilon * omega * omega),
        gradient: Some(gradient),
        sample_gradient: Some(Arc::new(move |x: &[f64], _| sg(x))),
        ..ProblemMetadata::default()
    };
    let constraint = if boxed {
        ConstraintSet::new_box(DenseVector::filled(d, -1.0), DenseVector::filled(d, 1.0))?
    } else {
        ConstraintSet::Unconstrained
    };
    ProblemSpec {
        objective,
        constraint,
        metadata,
        initial: DenseVector::zeros(d),
        tag: format!("nonconvex-d{d}-s{seed}{}", if boxed { "-box" } else { "" }),
        attack: None,
    }
    .validated()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn counterexample_values() {
        let p = make_counterexample_lp();
        assert_eq!(p.objective.evaluate(&v(&[0.5, 0.5]), 0).unwrap(), -1.5);
        assert_eq!(
            p.metadata.analytic_gradient(&v(&[0.1, -3.0])).unwrap(),
            v(&[-2.0, -1.0])
        );
        assert!(p.constraint.is_member(&p.initial));
    }

    #[test]
    fn quadratic_condition_one() {
        let p = make_quadratic(3, 1.0, 7).unwrap();
        let xs = p.metadata.comparator.clone().unwrap();
        assert_eq!(p.objective.full_loss(&xs).unwrap(), 0.0);
        assert_eq!(p.metadata.optimum_value, Some(0.0));
        let x = v(&[0.3, -0.1, 0.9]);
        let expect = 0.5 * x.sub(&xs).norm_sq();
        assert!((p.objective.full_loss(&x).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn finite_sum_gradients_average_to_full() {
        let p = make_quadratic_finite_sum(5, 10.0, 8, 0.5, 3).unwrap();
        let x = v(&[0.1, 0.2, -0.3, 0.4, -0.5]);
        let mut avg = DenseVector::zeros(5);
        for xi in 0..8 {
            avg.axpy(
                1.0 / 8.0,
                &p.metadata.analytic_sample_gradient(&x, xi).unwrap(),
            );
        }
        let full = p.metadata.analytic_gradient(&x).unwrap();
        assert!(avg.max_abs_diff(&full) < 1e-12);
        let xs = p.metadata.comparator.clone().unwrap();
        assert!(p.objective.full_loss(&xs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn logistic_at_origin() {
        let p = make_logistic(20, 4, 1).unwrap();
        let data = logistic_data(20, 4, 1).unwrap();
        let x0 = DenseVector::zeros(4);
        for xi in 0..20 {
            assert!((p.objective.evaluate(&x0, xi).unwrap() - 2f64.ln()).abs() < 1e-15);
            let g = p.metadata.analytic_sample_gradient(&x0, xi).unwrap();
            let expect = data.features[xi].scale(-data.labels[xi] / 2.0);
            assert!(g.max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn logistic_planted_beats_origin() {
        for seed in 0..100 {
            let p = make_logistic(50, 5, seed).unwrap();
            let w = p.metadata.comparator.clone().unwrap();
            let at_w = p.objective.full_loss(&w).unwrap();
            let at_0 = p.objective.full_loss(&DenseVector::zeros(5)).unwrap();
            assert!(at_w < at_0, "seed {seed}");
            assert!(p.constraint.is_member(&w));
        }
    }

    #[test]
    fn nonconvex_metadata_and_reduction() {
        let p = make_nonconvex(4, 2).unwrap();
        assert!((p.metadata.grad_lipschitz.unwrap() - 1.4).abs() < 1e-15);
        let flat = make_nonconvex_with(
            4,
            2,
            NonconvexOptions {
                epsilon: 0.0,
                ..NonconvexOptions::default()
            },
        )
        .unwrap();
        let x = v(&[0.3, -0.2, 0.5, 1.0]);
        let g = flat.metadata.analytic_gradient(&x).unwrap();
        let xs = x.sub(&g); // gradient is x - x* when eps = 0
        assert!((flat.objective.full_loss(&x).unwrap() - 0.5 * g.norm_sq()).abs() < 1e-12);
        assert!(flat.objective.full_loss(&xs).unwrap().abs() < 1e-12);
        let boxed = make_nonconvex_with(
            4,
            2,
            NonconvexOptions {
                boxed: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(boxed.constraint.name(), "box");
    }
}
