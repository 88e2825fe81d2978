//! Black-box stochastic objectives with query accounting.
//!
//! Optimizers only ever see an objective through [`StochasticObjective::evaluate`],
//! which bumps the query counter. Metric-side evaluations (full loss, regret
//! comparators) go through uncounted entry points so reported query
//! complexity covers optimizer work only.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, ZoError};
use crate::numkit::{DenseVector, RngStream};

/// `f(x; xi)` as an opaque callable.
pub type EvalFn = dyn Fn(&[f64], usize) -> f64 + Send + Sync;
/// Analytic gradient of the full objective (test problems only).
pub type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
/// Analytic gradient of a single sample `f(.; xi)`.
pub type SampleGradFn = dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync;

/// Where `xi` lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSpace {
    /// No randomness; the only valid index is 0.
    Deterministic,
    /// Finite sum over `n` samples indexed `0..n`.
    Finite(usize),
}

impl SampleSpace {
    pub fn size(&self) -> usize {
        match *self {
            SampleSpace::Deterministic => 1,
            SampleSpace::Finite(n) => n,
        }
    }
}

pub struct StochasticObjective {
    dim: usize,
    space: SampleSpace,
    eval: Arc<EvalFn>,
    queries: AtomicU64,
}

impl fmt::Debug for StochasticObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StochasticObjective")
            .field("dim", &self.dim)
            .field("space", &self.space)
            .field("queries", &self.queries())
            .finish()
    }
}

impl StochasticObjective {
    pub fn new(
        dim: usize,
        space: SampleSpace,
        eval: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(ZoError::InvalidDimension(0));
        }
        if space == SampleSpace::Finite(0) {
            return Err(ZoError::InvalidArgument(
                "finite sample space must be non-empty".into(),
            ));
        }
        Ok(Self {
            dim,
            space,
            eval: Arc::new(eval),
            queries: AtomicU64::new(0),
        })
    }

    pub fn deterministic(
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(dim, SampleSpace::Deterministic, move |x, _| eval(x))
    }

    /// Same evaluation rule with a zeroed counter.
    pub fn fresh(&self) -> Self {
        Self {
            dim: self.dim,
            space: self.space,
            eval: Arc::clone(&self.eval),
            queries: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_space(&self) -> SampleSpace {
        self.space
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn check(&self, x: &DenseVector, xi: usize) -> Result<()> {
        if x.dim() != self.dim {
            return Err(ZoError::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        let size = self.space.size();
        if xi >= size {
            return Err(ZoError::InvalidSample { index: xi, size });
        }
        Ok(())
    }

    fn call(&self, x: &DenseVector, xi: usize) -> Result<f64> {
        let v = (self.eval)(x.as_slice(), xi);
        if !v.is_finite() {
            return Err(ZoError::Numeric {
                message: format!("objective returned {v} for sample {xi}"),
                iteration: None,
                point: Some(x.as_slice().to_vec()),
            });
        }
        Ok(v)
    }

    /// One counted oracle query.
    pub fn evaluate(&self, x: &DenseVector, xi: usize) -> Result<f64> {
        self.check(x, xi)?;
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.call(x, xi)
    }

    /// Metric-only evaluation; does not touch the query counter.
    pub fn evaluate_uncounted(&self, x: &DenseVector, xi: usize) -> Result<f64> {
        self.check(x, xi)?;
        self.call(x, xi)
    }

    /// `b` indices drawn uniformly with replacement.
    pub fn sample_minibatch(&self, b: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        if b == 0 {
            return Err(ZoError::InvalidArgument(
                "minibatch size must be >= 1".into(),
            ));
        }
        Ok(match self.space {
            SampleSpace::Deterministic => vec![0; b],
            SampleSpace::Finite(n) => (0..b).map(|_| rng.below(n)).collect(),
        })
    }

    /// Exact average over the whole sample space, uncounted.
    pub fn full_loss(&self, x: &DenseVector) -> Result<f64> {
        let n = self.space.size();
        let mut acc = 0.0;
        for xi in 0..n {
            acc += self.evaluate_uncounted(x, xi)?;
        }
        Ok(acc / n as f64)
    }
}

/// Free-function form of [`StochasticObjective::evaluate`].
pub fn evaluate(obj: &StochasticObjective, x: &DenseVector, xi: usize) -> Result<f64> {
    obj.evaluate(x, xi)
}

pub fn sample_minibatch(
    obj: &StochasticObjective,
    b: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    obj.sample_minibatch(b, rng)
}

pub fn full_loss(obj: &StochasticObjective, x: &DenseVector) -> Result<f64> {
    obj.full_loss(x)
}

/// Known constants and reference quantities for a problem.
#[derive(Clone, Default)]
pub struct ProblemMetadata {
    /// Lipschitz constant of each `f(.; xi)` (possibly over a clipped domain).
    pub lipschitz: Option<f64>,
    /// Lipschitz constant of each sample gradient.
    pub grad_lipschitz: Option<f64>,
    /// Bound on the sup-norm of stochastic gradients.
    pub grad_bound: Option<f64>,
    pub optimum_value: Option<f64>,
    pub gradient: Option<Arc<GradFn>>,
    pub sample_gradient: Option<Arc<SampleGradFn>>,
    /// Fixed comparator point for regret (e.g. planted weights).
    pub comparator: Option<DenseVector>,
}

impl fmt::Debug for ProblemMetadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemMetadata")
            .field("lipschitz", &self.lipschitz)
            .field("grad_lipschitz", &self.grad_lipschitz)
            .field("grad_bound", &self.grad_bound)
            .field("optimum_value", &self.optimum_value)
            .field("gradient", &self.gradient.is_some())
            .field("sample_gradient", &self.sample_gradient.is_some())
            .field("comparator", &self.comparator)
            .finish()
    }
}

impl ProblemMetadata {
    pub fn analytic_gradient(&self, x: &DenseVector) -> Option<DenseVector> {
        self.gradient
            .as_ref()
            .map(|g| DenseVector::from_raw(g(x.as_slice())))
    }

    pub fn analytic_sample_gradient(&self, x: &DenseVector, xi: usize) -> Option<DenseVector> {
        self.sample_gradient
            .as_ref()
            .map(|g| DenseVector::from_raw(g(x.as_slice(), xi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn evaluate_counts_and_is_deterministic() {
        let obj = StochasticObjective::deterministic(2, |x| -2.0 * x[0] - x[1]).unwrap();
        let x = v(&[0.5, 0.5]);
        assert_eq!(obj.evaluate(&x, 0).unwrap(), -1.5);
        assert_eq!(obj.evaluate(&x, 0).unwrap(), -1.5);
        assert_eq!(obj.queries(), 2);
    }

    #[test]
    fn quadratic_at_origin() {
        let obj = StochasticObjective::deterministic(3, |x| x.iter().map(|v| v * v).sum()).unwrap();
        assert_eq!(obj.evaluate(&DenseVector::zeros(3), 0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_sample_and_nan() {
        let obj = StochasticObjective::new(1, SampleSpace::Finite(2), |x, _| x[0].ln()).unwrap();
        assert!(matches!(
            obj.evaluate(&v(&[1.0]), 2),
            Err(ZoError::InvalidSample { index: 2, size: 2 })
        ));
        match obj.evaluate(&v(&[-1.0]), 0) {
            Err(ZoError::Numeric { point, .. }) => assert_eq!(point, Some(vec![-1.0])),
            other => panic!("expected numeric error, got {other:?}"),
        }
        let det = StochasticObjective::deterministic(1, |x| x[0]).unwrap();
        assert!(det.evaluate(&v(&[0.0]), 1).is_err());
    }

    #[test]
    fn minibatch_rules() {
        let mut rng = RngStream::new(1);
        let det = StochasticObjective::deterministic(1, |x| x[0]).unwrap();
        assert_eq!(det.sample_minibatch(3, &mut rng).unwrap(), vec![0, 0, 0]);
        assert_eq!(det.sample_minibatch(1, &mut rng).unwrap().len(), 1);
        assert!(det.sample_minibatch(0, &mut rng).is_err());

        let fin = StochasticObjective::new(1, SampleSpace::Finite(10), |x, _| x[0]).unwrap();
        let draws = fin.sample_minibatch(100_000, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for d in draws {
            counts[d] += 1;
        }
        for c in counts {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 0.1).abs() <= 0.01, "freq {freq}");
        }
    }

    #[test]
    fn full_loss_is_uncounted_average() {
        let obj =
            StochasticObjective::new(
                1,
                SampleSpace::Finite(2),
                |_, xi| {
                    if xi == 0 {
                        1.0
                    } else {
                        3.0
                    }
                },
            )
            .unwrap();
        assert_eq!(obj.full_loss(&v(&[0.0])).unwrap(), 2.0);
        assert_eq!(obj.queries(), 0);

        let det = StochasticObjective::deterministic(1, |x| 3.0 * x[0]).unwrap();
        let x = v(&[2.0]);
        assert_eq!(det.full_loss(&x).unwrap(), det.evaluate(&x, 0).unwrap());
    }

    #[test]
    fn fresh_resets_counter() {
        let obj = StochasticObjective::deterministic(1, |x| x[0]).unwrap();
        obj.evaluate(&v(&[1.0]), 0).unwrap();
        let f = obj.fresh();
        assert_eq!(f.queries(), 0);
        assert_eq!(obj.queries(), 1);
    }
}
