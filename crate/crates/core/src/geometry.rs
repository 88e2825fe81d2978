//! Constraint sets, Euclidean and diagonal-Mahalanobis projections, the
//! gradient mapping and the convergence measures built on it.
//!
//! A [`DiagonalMetric`] `h` stands for `H = diag(h)`; the Mahalanobis projection
//! of `y` is `argmin_{x in X} sum_i h_i (x_i - y_i)^2`. Inside the adaptive
//! optimizer `h = sqrt(v_hat)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};
use crate::numkit::DenseVector;

/// Tolerance for membership and idempotence checks on closed-form projections.
pub const PROJECTION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintSet {
    Unconstrained,
    Box {
        lo: DenseVector,
        hi: DenseVector,
    },
    /// `|a^T x| <= b`.
    SymmetricBand {
        a: DenseVector,
        b: f64,
    },
    L2Ball {
        center: DenseVector,
        radius: f64,
    },
}

impl ConstraintSet {
    pub fn unconstrained() -> Self {
        ConstraintSet::Unconstrained
    }

    pub fn new_box(lo: DenseVector, hi: DenseVector) -> Result<Self> {
        lo.check_dim(&hi)?;
        if let Some(i) = (0..lo.dim()).find(|&i| lo[i] > hi[i]) {
            return Err(ZoError::InvalidArgument(format!(
                "box bound {i}: lo {} > hi {}",
                lo[i], hi[i]
            )));
        }
        Ok(ConstraintSet::Box { lo, hi })
    }

    pub fn symmetric_band(a: DenseVector, b: f64) -> Result<Self> {
        if a.norm_sq() == 0.0 {
            return Err(ZoError::InvalidArgument(
                "band normal must be non-zero".into(),
            ));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(ZoError::InvalidArgument(format!(
                "band half-width must be positive, got {b}"
            )));
        }
        Ok(ConstraintSet::SymmetricBand { a, b })
    }

    pub fn l2_ball(center: DenseVector, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ZoError::InvalidArgument(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(ConstraintSet::L2Ball { center, radius })
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, ConstraintSet::Unconstrained)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintSet::Unconstrained => "unconstrained",
            ConstraintSet::Box { .. } => "box",
            ConstraintSet::SymmetricBand { .. } => "symmetric-band",
            ConstraintSet::L2Ball { .. } => "l2-ball",
        }
    }

    /// Dimension required of points, if the set fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConstraintSet::Unconstrained => None,
            ConstraintSet::Box { lo, .. } => Some(lo.dim()),
            ConstraintSet::SymmetricBand { a, .. } => Some(a.dim()),
            ConstraintSet::L2Ball { center, .. } => Some(center.dim()),
        }
    }

    fn check_point(&self, x: &DenseVector) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.dim() => Err(ZoError::DimensionMismatch {
                expected: d,
                got: x.dim(),
            }),
            _ => Ok(()),
        }
    }

    /// Membership with absolute slack `tol`.
    pub fn contains(&self, x: &DenseVector, tol: f64) -> bool {
        if self.check_point(x).is_err() {
            return false;
        }
        match self {
            ConstraintSet::Unconstrained => true,
            ConstraintSet::Box { lo, hi } => {
                (0..x.dim()).all(|i| x[i] >= lo[i] - tol && x[i] <= hi[i] + tol)
            }
            ConstraintSet::SymmetricBand { a, b } => a.dot(x).abs() <= b + tol,
            ConstraintSet::L2Ball { center, radius } => x.sub(center).norm() <= radius + tol,
        }
    }

    pub fn is_member(&self, x: &DenseVector) -> bool {
        self.contains(x, PROJECTION_TOL)
    }
}

/// Positive diagonal weights `h` of the metric `H = diag(h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalMetric {
    h: DenseVector,
}

impl DiagonalMetric {
    pub fn new(h: DenseVector) -> Result<Self> {
        if let Some(i) = (0..h.dim()).find(|&i| !(h[i] > 0.0) || !h[i].is_finite()) {
            return Err(ZoError::InvalidArgument(format!(
                "metric weight {i} must be positive and finite, got {}",
                h[i]
            )));
        }
        Ok(Self { h })
    }

    pub fn unit(d: usize) -> Self {
        Self {
            h: DenseVector::filled(d, 1.0),
        }
    }

    pub fn weights(&self) -> &DenseVector {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// `H^{-1} v`.
    pub fn solve(&self, v: &DenseVector) -> DenseVector {
        v.zip_map(&self.h, |a, h| a / h)
    }

    /// Weighted squared distance `sum_i h_i (x_i - y_i)^2`.
    pub fn distance_sq(&self, x: &DenseVector, y: &DenseVector) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.dim() {
            let d = x[i] - y[i];
            acc += self.h[i] * d * d;
        }
        acc
    }
}

fn clamp_box(lo: &DenseVector, hi: &DenseVector, y: &DenseVector) -> DenseVector {
    DenseVector::from_raw((0..y.dim()).map(|i| y[i].max(lo[i]).min(hi[i])).collect())
}

/// Euclidean projection onto `set`.
pub fn project_euclidean(set: &ConstraintSet, y: &DenseVector) -> Result<DenseVector> {
    set.check_point(y)?;
    Ok(match set {
        ConstraintSet::Unconstrained => y.clone(),
        ConstraintSet::Box { lo, hi } => clamp_box(lo, hi, y),
        ConstraintSet::SymmetricBand { a, b } => {
            let s = a.dot(y);
            if s.abs() <= *b {
                y.clone()
            } else {
                let target = s.signum() * b;
                y.add_scaled(-(s - target) / a.norm_sq(), a)
            }
        }
        ConstraintSet::L2Ball { center, radius } => {
            let z = y.sub(center);
            let n = z.norm();
            if n <= *radius {
                y.clone()
            } else {
                center.add_scaled(radius / n, &z)
            }
        }
    })
}

/// Projection under the weighted distance `sum_i h_i (x_i - y_i)^2`.
pub fn project_mahalanobis(
    set: &ConstraintSet,
    metric: &DiagonalMetric,
    y: &DenseVector,
) -> Result<DenseVector> {
    set.check_point(y)?;
    if metric.dim() != y.dim() {
        return Err(ZoError::DimensionMismatch {
            expected: y.dim(),
            got: metric.dim(),
        });
    }
    match set {
        ConstraintSet::Unconstrained => Ok(y.clone()),
        // the metric is separable, so the box projection is a clamp in any metric
        ConstraintSet::Box { lo, hi } => Ok(clamp_box(lo, hi, y)),
        ConstraintSet::SymmetricBand { a, b } => {
            let s = a.dot(y);
            if s.abs() <= *b {
                return Ok(y.clone());
            }
            let target = s.signum() * b;
            let hinv_a = metric.solve(a);
            let denom = a.dot(&hinv_a);
            if !(denom > 0.0) {
                return Err(ZoError::Internal(format!(
                    "a^T H^-1 a = {denom} for a positive metric"
                )));
            }
            Ok(y.add_scaled(-(s - target) / denom, &hinv_a))
        }
        ConstraintSet::L2Ball { center, radius } => {
            Ok(project_ball_weighted(center, *radius, metric.weights(), y))
        }
    }
}

/// Weighted projection onto a Euclidean ball. The KKT point is
/// `x_i = c_i + h_i z_i / (h_i + lambda)` with `z = y - c`; `lambda >= 0` solves
/// `|x - c| = r` and is found by bisection on the monotone residual.
fn project_ball_weighted(
    center: &DenseVector,
    radius: f64,
    h: &DenseVector,
    y: &DenseVector,
) -> DenseVector {
    let z = y.sub(center);
    let zn = z.norm();
    if zn <= radius {
        return y.clone();
    }
    let at = |lambda: f64| -> DenseVector { z.zip_map(h, |zi, hi| hi * zi / (hi + lambda)) };
    let mut lo = 0.0_f64;
    let mut hi = h.norm_inf() * zn / radius;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if at(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut offset = at(hi);
    let n = offset.norm();
    if n > radius {
        offset = offset.scale(radius / n);
    }
    center.add(&offset)
}

/// `P = (x_minus - x_plus) / omega` with
/// `x_plus = argmin_{x in X} <g, x> + (1/omega) |H^{1/2}(x - x_minus)|^2 / 2`.
pub fn gradient_mapping(
    set: &ConstraintSet,
    metric: &DiagonalMetric,
    x_minus: &DenseVector,
    g: &DenseVector,
    omega: f64,
) -> Result<DenseVector> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(ZoError::InvalidArgument(format!(
            "step size omega must be positive, got {omega}"
        )));
    }
    x_minus.check_dim(g)?;
    let y = x_minus.add_scaled(-omega, &metric.solve(g));
    let x_plus = project_mahalanobis(set, metric, &y)?;
    Ok(x_minus.sub(&x_plus).scale(1.0 / omega))
}

/// `|V^{1/4} P(x, grad, alpha)|^2` with `V^{1/2} = diag(h)`, i.e.
/// `sum_i h_i P_i^2`. Reduces to `sum_i grad_i^2 / h_i` without constraints.
pub fn mahalanobis_measure(
    set: &ConstraintSet,
    metric: &DiagonalMetric,
    x: &DenseVector,
    grad: &DenseVector,
    alpha: f64,
) -> Result<f64> {
    let p = gradient_mapping(set, metric, x, grad, alpha)?;
    let mut acc = 0.0;
    for i in 0..p.dim() {
        acc += metric.weights()[i] * p[i] * p[i];
    }
    Ok(acc)
}

/// `<grad, x_test - x_star>`; negative values witness non-stationarity of `x_star`.
pub fn vi_violation(grad: &DenseVector, x_star: &DenseVector, x_test: &DenseVector) -> Result<f64> {
    grad.check_dim(x_star)?;
    grad.check_dim(x_test)?;
    Ok(grad.dot(&x_test.sub(x_star)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    fn band() -> ConstraintSet {
        ConstraintSet::symmetric_band(v(&[1.0, 1.0]), 1.0).unwrap()
    }

    #[test]
    fn band_projection_fixes_half_half() {
        for alpha in [1e-6, 0.01, 0.3, 5.0, 1e3] {
            let p = project_euclidean(&band(), &v(&[0.5 + alpha, 0.5 + alpha])).unwrap();
            assert!(
                p.max_abs_diff(&v(&[0.5, 0.5])) < 1e-12,
                "alpha {alpha}: {p:?}"
            );
        }
    }

    #[test]
    fn box_clamp() {
        let set = ConstraintSet::new_box(v(&[-0.5, -0.5]), v(&[0.5, 0.5])).unwrap();
        assert_eq!(
            project_euclidean(&set, &v(&[0.7, -0.9])).unwrap(),
            v(&[0.5, -0.5])
        );
        let metric = DiagonalMetric::new(v(&[3.0, 0.01])).unwrap();
        assert_eq!(
            project_mahalanobis(&set, &metric, &v(&[0.7, -0.9])).unwrap(),
            v(&[0.5, -0.5])
        );
    }

    #[test]
    fn members_are_fixed() {
        let y = v(&[0.2, 0.3]);
        for set in [
            ConstraintSet::Unconstrained,
            band(),
            ConstraintSet::l2_ball(v(&[0.0, 0.0]), 1.0).unwrap(),
            ConstraintSet::new_box(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap(),
        ] {
            assert_eq!(project_euclidean(&set, &y).unwrap(), y);
        }
    }

    #[test]
    fn weighted_band_example() {
        // closed form [0.5 + alpha/3, 0.5 - alpha/3] at alpha = 0.3
        let metric = DiagonalMetric::new(v(&[2.0, 1.0])).unwrap();
        let p = project_mahalanobis(&band(), &metric, &v(&[0.8, 0.8])).unwrap();
        assert!(p.max_abs_diff(&v(&[0.6, 0.4])) < 1e-12, "{p:?}");
    }

    #[test]
    fn weighted_ball_on_boundary_and_optimal() {
        let set = ConstraintSet::l2_ball(v(&[0.0, 0.0]), 1.0).unwrap();
        let metric = DiagonalMetric::new(v(&[4.0, 0.5])).unwrap();
        let y = v(&[2.0, 1.5]);
        let p = project_mahalanobis(&set, &metric, &y).unwrap();
        assert!((p.norm() - 1.0).abs() < 1e-12);
        // scan the circle for anything better
        let best = (0..200_000)
            .map(|k| {
                let t = k as f64 / 200_000.0 * std::f64::consts::TAU;
                metric.distance_sq(&v(&[t.cos(), t.sin()]), &y)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(metric.distance_sq(&p, &y) <= best + 1e-9);
    }

    #[test]
    fn unconstrained_mapping_is_scaled_gradient() {
        let metric = DiagonalMetric::new(v(&[2.0, 0.5])).unwrap();
        let g = v(&[1.0, -3.0]);
        let p = gradient_mapping(
            &ConstraintSet::Unconstrained,
            &metric,
            &v(&[0.1, 0.2]),
            &g,
            0.3,
        )
        .unwrap();
        assert!(p.max_abs_diff(&v(&[0.5, -6.0])) < 1e-12);
        let p1 = gradient_mapping(
            &ConstraintSet::Unconstrained,
            &DiagonalMetric::unit(2),
            &v(&[0.1, 0.2]),
            &g,
            0.3,
        )
        .unwrap();
        assert!(p1.max_abs_diff(&g) < 1e-12);
    }

    #[test]
    fn interior_mapping_matches_unconstrained() {
        let set = ConstraintSet::new_box(v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        let metric = DiagonalMetric::new(v(&[2.0, 4.0])).unwrap();
        let g = v(&[0.4, -0.8]);
        let p = gradient_mapping(&set, &metric, &v(&[0.0, 0.0]), &g, 0.01).unwrap();
        assert!(p.max_abs_diff(&metric.solve(&g)) < 1e-12);
    }

    #[test]
    fn counterexample_fixed_point_mapping_vanishes() {
        let p = gradient_mapping(
            &band(),
            &DiagonalMetric::unit(2),
            &v(&[0.5, 0.5]),
            &v(&[-1.0, -1.0]),
            0.1,
        )
        .unwrap();
        assert!(p.norm() < 1e-12);
        let m = mahalanobis_measure(
            &band(),
            &DiagonalMetric::unit(2),
            &v(&[0.5, 0.5]),
            &v(&[-1.0, -1.0]),
            0.1,
        )
        .unwrap();
        assert!(m < 1e-24);
    }

    #[test]
    fn measure_unconstrained_values() {
        let m = mahalanobis_measure(
            &ConstraintSet::Unconstrained,
            &DiagonalMetric::unit(2),
            &v(&[0.0, 0.0]),
            &v(&[3.0, 4.0]),
            0.5,
        )
        .unwrap();
        assert!((m - 25.0).abs() < 1e-12);
        // sum_i g_i^2 / h_i = 4/4 + 1/1
        let m = mahalanobis_measure(
            &ConstraintSet::Unconstrained,
            &DiagonalMetric::new(v(&[4.0, 1.0])).unwrap(),
            &v(&[0.0, 0.0]),
            &v(&[2.0, 1.0]),
            0.5,
        )
        .unwrap();
        assert!((m - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vi_witness() {
        let g = v(&[-2.0, -1.0]);
        let xs = v(&[0.5, 0.5]);
        assert!((vi_violation(&g, &xs, &v(&[0.6, 0.4])).unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(vi_violation(&g, &xs, &xs).unwrap(), 0.0);
        assert_eq!(
            vi_violation(&DenseVector::zeros(2), &xs, &v(&[3.0, -7.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn constructor_validation() {
        assert!(ConstraintSet::new_box(v(&[1.0]), v(&[0.0])).is_err());
        assert!(ConstraintSet::symmetric_band(v(&[0.0, 0.0]), 1.0).is_err());
        assert!(ConstraintSet::symmetric_band(v(&[1.0, 0.0]), 0.0).is_err());
        assert!(ConstraintSet::l2_ball(v(&[0.0]), -1.0).is_err());
        assert!(DiagonalMetric::new(v(&[1.0, 0.0])).is_err());
        assert!(gradient_mapping(
            &ConstraintSet::Unconstrained,
            &DiagonalMetric::unit(1),
            &v(&[0.0]),
            &v(&[1.0]),
            0.0
        )
        .is_err());
    }
}
