//! Monte-Carlo probes of the ball-smoothed function `f_mu(x) = E_u f(x + mu u)`
//! and a closed-form reference for diagonal quadratics.

use crate::error::{Result, ZoError};
use crate::estimators::{effective_mu, two_point_along, MU_FLOOR};
use crate::numkit::{
    sample_unit_ball, sample_unit_sphere, DenseVector, RngStream, RunningStats, VectorStats,
};
use crate::oracle::StochasticObjective;

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingProbe {
    pub mu: f64,
    pub samples: usize,
    pub seed: u64,
    /// Lower clamp applied to `mu`; exposed so regression fixtures can corrupt it.
    pub mu_floor: f64,
}

impl SmoothingProbe {
    pub fn new(mu: f64, samples: usize, seed: u64) -> Self {
        Self {
            mu,
            samples,
            seed,
            mu_floor: MU_FLOOR,
        }
    }

    fn validate(&self) -> Result<f64> {
        if self.samples == 0 {
            return Err(ZoError::InvalidArgument(
                "probe needs at least one sample".into(),
            ));
        }
        effective_mu(self.mu, self.mu_floor)
    }
}

/// Sample mean and standard error of `f(x + mu u; xi)`, `u` uniform in the ball.
pub fn smooth_value_mc(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    probe: &SmoothingProbe,
) -> Result<(f64, f64)> {
    let mu = probe.validate()?;
    let mut rng = RngStream::new(probe.seed);
    let mut stats = RunningStats::new();
    for _ in 0..probe.samples {
        let u = sample_unit_ball(x.dim(), &mut rng)?;
        stats.push(obj.evaluate(&x.add_scaled(mu, &u), xi)?);
    }
    Ok((stats.mean(), stats.stderr()))
}

/// Per-coordinate mean and standard error of `N` two-point sphere estimates.
pub fn smooth_grad_mc_with_stderr(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    probe: &SmoothingProbe,
) -> Result<(DenseVector, DenseVector)> {
    let mu = probe.validate()?;
    let d = x.dim();
    let mut rng = RngStream::new(probe.seed);
    let mut stats = VectorStats::new(d);
    for _ in 0..probe.samples {
        let u = sample_unit_sphere(d, &mut rng)?;
        stats.push(&two_point_along(obj, x, xi, mu, &u, d as f64)?);
    }
    Ok((stats.mean(), stats.stderr()))
}

/// Monte-Carlo estimate of `grad f_mu(x)`.
pub fn smooth_grad_mc(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    probe: &SmoothingProbe,
) -> Result<DenseVector> {
    smooth_grad_mc_with_stderr(obj, x, xi, probe).map(|(m, _)| m)
}

/// Exact `(f_mu(x), grad f_mu(x))` for `f(x) = 1/2 sum A_i x_i^2 + b.x`.
///
/// Uses `E[u_i^2] = 1/(d+2)` for `u` uniform in the unit ball, so the value
/// shifts by `mu^2 sum A_i / (2(d+2))` and the gradient is unchanged.
pub fn analytic_smooth_quadratic(
    a_diag: &DenseVector,
    b: &DenseVector,
    x: &DenseVector,
    mu: f64,
) -> Result<(f64, DenseVector)> {
    a_diag.check_dim(b)?;
    a_diag.check_dim(x)?;
    if mu < 0.0 || !mu.is_finite() {
        return Err(ZoError::InvalidArgument(format!(
            "mu must be >= 0, got {mu}"
        )));
    }
    let d = x.dim() as f64;
    let mut value = 0.0;
    for i in 0..x.dim() {
        value += 0.5 * a_diag[i] * x[i] * x[i] + b[i] * x[i];
    }
    value += mu * mu * a_diag.sum() / (2.0 * (d + 2.0));
    let grad = a_diag.hadamard(x).add(b);
    Ok((value, grad))
}
