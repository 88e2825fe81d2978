//! Dense vectors and seeded randomness.
//!
//! Every reduction here accumulates sequentially from index 0 upward so that
//! results are bitwise reproducible across runs. The random stream is ChaCha8
//! (a counter-based generator with a fixed published algorithm); the mapping
//! from raw 64-bit words to floats and Gaussians is pinned in this module and
//! must not change without regenerating golden traces.

use std::fmt;
use std::ops::Index;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZoError};

/// A fixed-dimension real vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

impl DenseVector {
    /// Build a vector, rejecting empty input and non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(ZoError::InvalidDimension(0));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ZoError::Numeric {
                message: format!("entry {i} is {}", data[i]),
                iteration: None,
                point: None,
            });
        }
        Ok(Self { data })
    }

    /// Internal constructor for results whose finiteness is checked by the caller.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(d: usize) -> Self {
        Self { data: vec![0.0; d] }
    }

    pub fn filled(d: usize, value: f64) -> Self {
        Self {
            data: vec![value; d],
        }
    }

    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = Self::zeros(d);
        v.data[i] = 1.0;
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with a numeric error if any entry is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(ZoError::numeric(format!(
                "{what}: entry {i} is {}",
                self.data[i]
            ))),
        }
    }

    pub fn check_dim(&self, other: &DenseVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(ZoError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    #[inline]
    fn assert_same_dim(&self, other: &DenseVector) {
        assert_eq!(
            self.dim(),
            other.dim(),
            "dimension mismatch in vector operation"
        );
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        self.assert_same_dim(other);
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        acc
    }

    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseVector) -> DenseVector {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> DenseVector {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &DenseVector) -> DenseVector {
        self.zip_map(other, |a, b| a + s * b)
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &DenseVector) {
        self.assert_same_dim(other);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseVector {
        DenseVector::from_raw(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &DenseVector, f: impl Fn(f64, f64) -> f64) -> DenseVector {
        self.assert_same_dim(other);
        DenseVector::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Componentwise sign with `sign(0) = 0`.
    pub fn signum0(&self) -> DenseVector {
        self.map(sign0)
    }

    pub fn max_abs_diff(&self, other: &DenseVector) -> f64 {
        self.assert_same_dim(other);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.data
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Componentwise maximum of two equal-length vectors.
pub fn elementwise_max(a: &DenseVector, b: &DenseVector) -> Result<DenseVector> {
    a.check_dim(b)?;
    Ok(a.zip_map(b, f64::max))
}

const F64_UNIT: f64 = 1.0 / (1u64 << 53) as f64;

/// Seeded, reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// An independent stream keyed by `(seed, stream)`. Used for per-shard
    /// Monte-Carlo streams and for metric-side randomness that must not
    /// perturb an optimizer's own draws.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * F64_UNIT
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let r = self.next_u64();
            if r < zone {
                return (r % n) as usize;
            }
        }
    }

    /// Standard normal via the Box-Muller transform; the second variate of
    /// each pair is cached and returned by the next call.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vector(&mut self, d: usize) -> DenseVector {
        DenseVector::from_raw((0..d).map(|_| self.next_normal()).collect())
    }

    /// `k` distinct indices from `[0, n)` via a partial Fisher-Yates shuffle.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Uniform direction on the unit sphere in `d` dimensions.
pub fn sample_unit_sphere(d: usize, rng: &mut RngStream) -> Result<DenseVector> {
    if d == 0 {
        return Err(ZoError::InvalidDimension(0));
    }
    loop {
        let g = rng.normal_vector(d);
        let n = g.norm();
        if n > 0.0 {
            return Ok(g.map(|v| v / n));
        }
    }
}

/// Uniform point in the closed unit ball in `d` dimensions.
pub fn sample_unit_ball(d: usize, rng: &mut RngStream) -> Result<DenseVector> {
    let dir = sample_unit_sphere(d, rng)?;
    let r = rng.next_f64().powf(1.0 / d as f64);
    let mut u = dir.scale(r);
    // rounding in the normalisation can leave the norm a hair above 1
    let n = u.norm();
    if n > 1.0 {
        u = u.scale(1.0 / n);
    }
    Ok(u)
}

/// Running mean and variance (Welford), used by the Monte-Carlo checks.
#[derive(Clone, Debug, Default)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Per-coordinate running statistics for vector-valued samples.
#[derive(Clone, Debug)]
pub struct VectorStats {
    coords: Vec<RunningStats>,
}

impl VectorStats {
    pub fn new(d: usize) -> Self {
        Self {
            coords: vec![RunningStats::new(); d],
        }
    }

    pub fn push(&mut self, v: &DenseVector) {
        assert_eq!(v.dim(), self.coords.len());
        for (s, &x) in self.coords.iter_mut().zip(v.iter()) {
            s.push(x);
        }
    }

    pub fn count(&self) -> u64 {
        self.coords.first().map_or(0, |s| s.count())
    }

    pub fn mean(&self) -> DenseVector {
        DenseVector::from_raw(self.coords.iter().map(|s| s.mean()).collect())
    }

    pub fn stderr(&self) -> DenseVector {
        DenseVector::from_raw(self.coords.iter().map(|s| s.stderr()).collect())
    }

    /// Sum of per-coordinate variances (trace of the covariance).
    pub fn total_variance(&self) -> f64 {
        let mut acc = 0.0;
        for s in &self.coords {
            acc += s.variance();
        }
        acc
    }
}
