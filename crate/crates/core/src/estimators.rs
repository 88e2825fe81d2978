//! Zeroth-order gradient estimators.
//!
//! All estimators read the objective only through counted `evaluate` calls.
//! Query costs are exact:
//!
//! | estimator                  | queries per call      |
//! |----------------------------|-----------------------|
//! | [`two_point_uniform`]      | 2                     |
//! | [`averaged_estimator`]     | `b * (q + 1)`         |
//! | [`coordinate_estimate`]    | `2 * coords.len()`    |
//! | [`nes_antithetic_estimate`]| `2 * q`               |
//!
//! The averaged estimator evaluates the base value `f(x; xi_j)` once per
//! sample and reuses it across the `q` directions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};
use crate::numkit::{sample_unit_sphere, DenseVector, RngStream};
use crate::oracle::StochasticObjective;

/// Smallest smoothing radius ever used; requested values below it are raised to it.
pub const MU_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    UniformTwoPoint,
    Coordinate,
    NesAntithetic,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::UniformTwoPoint => "uniform-two-point",
            EstimatorKind::Coordinate => "coordinate",
            EstimatorKind::NesAntithetic => "nes-antithetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform-two-point" => Some(EstimatorKind::UniformTwoPoint),
            "coordinate" => Some(EstimatorKind::Coordinate),
            "nes-antithetic" => Some(EstimatorKind::NesAntithetic),
            _ => None,
        }
    }
}

/// Distribution of random directions for the two-point estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directions {
    /// Uniform on the unit sphere, scaled by `d / mu`.
    Sphere,
    /// Standard Gaussian, scaled by `1 / mu` (ablation only).
    Gaussian,
}

impl Directions {
    pub fn name(&self) -> &'static str {
        match self {
            Directions::Sphere => "sphere",
            Directions::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sphere" => Some(Directions::Sphere),
            "gaussian" => Some(Directions::Gaussian),
            _ => None,
        }
    }

    fn draw(&self, d: usize, rng: &mut RngStream) -> Result<DenseVector> {
        match self {
            Directions::Sphere => sample_unit_sphere(d, rng),
            Directions::Gaussian => Ok(rng.normal_vector(d)),
        }
    }

    fn scale(&self, d: usize) -> f64 {
        match self {
            Directions::Sphere => d as f64,
            Directions::Gaussian => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mu: f64,
    pub b: usize,
    pub q: usize,
    pub kind: EstimatorKind,
    pub directions: Directions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mu: 0.005,
            b: 1,
            q: 10,
            kind: EstimatorKind::UniformTwoPoint,
            directions: Directions::Sphere,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ZoError::config(
                "estimator.mu",
                "must be a positive finite number",
            ));
        }
        if self.b == 0 {
            return Err(ZoError::config("estimator.b", "must be >= 1"));
        }
        if self.q == 0 {
            return Err(ZoError::config("estimator.q", "must be >= 1"));
        }
        Ok(())
    }

    /// Oracle queries consumed by one call of [`estimate_on_batch`] in dimension `d`.
    pub fn queries_per_call(&self, d: usize) -> u64 {
        let b = self.b as u64;
        let q = self.q as u64;
        match self.kind {
            EstimatorKind::UniformTwoPoint => b * (q + 1),
            EstimatorKind::Coordinate => 2 * b * (self.q.min(d) as u64),
            EstimatorKind::NesAntithetic => 2 * b * q,
        }
    }
}

/// Validate a requested smoothing radius and raise it to `floor`.
pub fn effective_mu(mu: f64, floor: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(ZoError::InvalidArgument(format!(
            "smoothing parameter must be positive, got {mu}"
        )));
    }
    Ok(mu.max(floor))
}

fn finite_grad(g: DenseVector) -> Result<DenseVector> {
    g.check_finite("gradient estimate")?;
    Ok(g)
}

/// Forward difference along a caller-supplied direction:
/// `scale / mu * [f(x + mu u; xi) - f(x; xi)] * u`.
pub fn two_point_along(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    mu: f64,
    u: &DenseVector,
    scale: f64,
) -> Result<DenseVector> {
    let mu = effective_mu(mu, MU_FLOOR)?;
    let base = obj.evaluate(x, xi)?;
    let shifted = obj.evaluate(&x.add_scaled(mu, u), xi)?;
    finite_grad(u.scale(scale / mu * (shifted - base)))
}

/// Two-point estimator with one uniform-sphere direction. Costs 2 queries.
pub fn two_point_uniform(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    mu: f64,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    let u = sample_unit_sphere(x.dim(), rng)?;
    two_point_along(obj, x, xi, mu, &u, x.dim() as f64)
}

/// Minibatch / multi-direction average over a given batch. Directions are
/// shared across the batch samples; costs `batch.len() * (q + 1)` queries.
pub fn averaged_on_batch(
    obj: &StochasticObjective,
    x: &DenseVector,
    mu: f64,
    batch: &[usize],
    q: usize,
    directions: Directions,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    if batch.is_empty() || q == 0 {
        return Err(ZoError::InvalidArgument(
            "averaged estimator needs b >= 1 and q >= 1".into(),
        ));
    }
    let mu = effective_mu(mu, MU_FLOOR)?;
    let d = x.dim();
    let dirs: Vec<DenseVector> = (0..q)
        .map(|_| directions.draw(d, rng))
        .collect::<Result<_>>()?;
    let perturbed: Vec<DenseVector> = dirs.iter().map(|u| x.add_scaled(mu, u)).collect();

    let mut coeffs = vec![0.0; q];
    for &xi in batch {
        let base = obj.evaluate(x, xi)?;
        for (c, xp) in coeffs.iter_mut().zip(&perturbed) {
            *c += obj.evaluate(xp, xi)? - base;
        }
    }
    let norm = directions.scale(d) / (mu * (batch.len() * q) as f64);
    let mut g = DenseVector::zeros(d);
    for (c, u) in coeffs.iter().zip(&dirs) {
        g.axpy(c * norm, u);
    }
    finite_grad(g)
}

/// Variance-reduced estimator: draw `b` samples, then `q` sphere directions.
pub fn averaged_estimator(
    obj: &StochasticObjective,
    x: &DenseVector,
    mu: f64,
    b: usize,
    q: usize,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    let batch = obj.sample_minibatch(b, rng)?;
    averaged_on_batch(obj, x, mu, &batch, q, Directions::Sphere, rng)
}

/// Central differences on the listed coordinates; zero elsewhere.
pub fn coordinate_estimate(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    mu: f64,
    coords: &[usize],
) -> Result<DenseVector> {
    if coords.is_empty() {
        return Err(ZoError::InvalidArgument("coordinate list is empty".into()));
    }
    let d = x.dim();
    let mut seen = vec![false; d];
    for &i in coords {
        if i >= d {
            return Err(ZoError::InvalidArgument(format!(
                "coordinate {i} out of range for dimension {d}"
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(ZoError::InvalidArgument(format!(
                "duplicate coordinate {i}"
            )));
        }
    }
    let mu = effective_mu(mu, MU_FLOOR)?;
    let mut g = DenseVector::zeros(d);
    let mut probe = x.clone();
    for &i in coords {
        let xi0 = x[i];
        probe.as_mut_slice()[i] = xi0 + mu;
        let fp = obj.evaluate(&probe, xi)?;
        probe.as_mut_slice()[i] = xi0 - mu;
        let fm = obj.evaluate(&probe, xi)?;
        probe.as_mut_slice()[i] = xi0;
        g.as_mut_slice()[i] = (fp - fm) / (2.0 * mu);
    }
    finite_grad(g)
}

/// Antithetic Gaussian estimator along caller-supplied directions.
pub fn nes_along(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    mu: f64,
    dirs: &[DenseVector],
) -> Result<DenseVector> {
    if dirs.is_empty() {
        return Err(ZoError::InvalidArgument("NES needs q >= 1".into()));
    }
    let mu = effective_mu(mu, MU_FLOOR)?;
    let mut g = DenseVector::zeros(x.dim());
    for u in dirs {
        let fp = obj.evaluate(&x.add_scaled(mu, u), xi)?;
        let fm = obj.evaluate(&x.add_scaled(-mu, u), xi)?;
        g.axpy(fp - fm, u);
    }
    finite_grad(g.scale(1.0 / (2.0 * dirs.len() as f64 * mu)))
}

/// NES antithetic estimator with `q` fresh Gaussian directions. Costs `2q` queries.
pub fn nes_antithetic_estimate(
    obj: &StochasticObjective,
    x: &DenseVector,
    xi: usize,
    mu: f64,
    q: usize,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    if q == 0 {
        return Err(ZoError::InvalidArgument("NES needs q >= 1".into()));
    }
    let dirs: Vec<DenseVector> = (0..q).map(|_| rng.normal_vector(x.dim())).collect();
    nes_along(obj, x, xi, mu, &dirs)
}

/// Dispatch on the configured estimator kind for one optimizer iteration.
/// `mu` is the scheduled smoothing radius for this iteration.
pub fn estimate_on_batch(
    obj: &StochasticObjective,
    x: &DenseVector,
    batch: &[usize],
    cfg: &EstimatorConfig,
    mu: f64,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    match cfg.kind {
        EstimatorKind::UniformTwoPoint => {
            averaged_on_batch(obj, x, mu, batch, cfg.q, cfg.directions, rng)
        }
        EstimatorKind::Coordinate => {
            let k = cfg.q.min(x.dim());
            let coords = rng.choose_distinct(x.dim(), k);
            let mut g = DenseVector::zeros(x.dim());
            for &xi in batch {
                g.axpy(1.0, &coordinate_estimate(obj, x, xi, mu, &coords)?);
            }
            Ok(g.scale(1.0 / batch.len() as f64))
        }
        EstimatorKind::NesAntithetic => {
            let dirs: Vec<DenseVector> = (0..cfg.q).map(|_| rng.normal_vector(x.dim())).collect();
            let mut g = DenseVector::zeros(x.dim());
            for &xi in batch {
                g.axpy(1.0, &nes_along(obj, x, xi, mu, &dirs)?);
            }
            Ok(g.scale(1.0 / batch.len() as f64))
        }
    }
}
