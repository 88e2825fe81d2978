//! Shared fixtures for the benchmarks.

use zoopt_core::geometry::ConstraintSet;
use zoopt_core::{DenseVector, DiagonalMetric, RngStream};

/// A point of `[-scale, scale]^d`.
pub fn random_point(d: usize, scale: f64, rng: &mut RngStream) -> DenseVector {
    DenseVector::new((0..d).map(|_| scale * (2.0 * rng.next_f64() - 1.0)).collect())
        .expect("finite entries")
}

/// Positive diagonal weights in `[0.1, 10]`.
pub fn random_metric(d: usize, rng: &mut RngStream) -> DiagonalMetric {
    let h = (0..d).map(|_| 0.1 + 9.9 * rng.next_f64()).collect();
    DiagonalMetric::new(DenseVector::new(h).expect("finite weights")).expect("positive weights")
}

/// One set of each kind in dimension `d`.
pub fn constraint_sets(d: usize, rng: &mut RngStream) -> Vec<(&'static str, ConstraintSet)> {
    let c = random_point(d, 0.5, rng);
    let w = DenseVector::filled(d, 0.5);
    vec![
        ("box", ConstraintSet::new_box(c.sub(&w), c.add(&w)).expect("ordered bounds")),
        ("band", ConstraintSet::symmetric_band(random_point(d, 1.0, rng), 0.5).expect("valid band")),
        ("ball", ConstraintSet::l2_ball(c, 1.0).expect("valid ball")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_requested_dimension() {
        let mut rng = RngStream::new(3);
        assert_eq!(random_point(7, 1.0, &mut rng).dim(), 7);
        assert_eq!(random_metric(7, &mut rng).dim(), 7);
        for (_, s) in constraint_sets(7, &mut rng) {
            assert_eq!(s.dim(), Some(7));
        }
    }
}
