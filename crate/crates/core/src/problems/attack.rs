//! Black-box evasion attacks against a frozen [`TinyMlp`].
//!
//! Constrained mode optimizes a perturbation `delta` directly:
//! `(lambda/M) sum_i cw(x_i + delta) + |delta|^2` subject to every
//! `x_i + delta` staying in `[-0.5, 0.5]^d`. Unconstrained mode optimizes `w`
//! through `x' = 0.5 tanh(atanh(2x) + w)` and penalises
//! `(lambda/M) sum_i [cw(x'_i) + |x'_i - x_i|^2]`.
//! Each image is one sample of a finite-sum objective.

use std::sync::Arc;

use super::mlp::{argmax, TinyMlp};
use super::ProblemSpec;
use crate::error::{Result, ZoError};
use crate::geometry::ConstraintSet;
use crate::numkit::{DenseVector, RngStream};
use crate::oracle::{ProblemMetadata, SampleSpace, StochasticObjective};

pub const DEFAULT_LAMBDA: f64 = 10.0;
/// Coordinates closer than this to `+-0.5` are pulled inward before `atanh`.
pub const TANH_SHRINK: f64 = 1e-6;
pub const VICTIM_SEED: u64 = 20_190_527;
const VICTIM_SIZES: [usize; 3] = [16, 12, 4];
const VICTIM_GAIN: f64 = 2.0;
const VICTIM_IMAGES: usize = 10;
const PINNED_VICTIM: &str = include_str!("../../data/victim_mlp.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMode {
    Constrained,
    Unconstrained,
}

impl AttackMode {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMode::Constrained => "constrained",
            AttackMode::Unconstrained => "unconstrained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constrained" => Some(AttackMode::Constrained),
            "unconstrained" => Some(AttackMode::Unconstrained),
            _ => None,
        }
    }
}

/// Untargeted margin loss `max{Z_t - max_{j != t} Z_j, -kappa}`.
pub fn cw_loss(logits: &DenseVector, target: usize, kappa: f64) -> Result<f64> {
    let z = logits.as_slice();
    if z.len() < 2 {
        return Err(ZoError::InvalidArgument(
            "CW loss needs at least two classes".into(),
        ));
    }
    if target >= z.len() {
        return Err(ZoError::InvalidArgument(format!(
            "class {target} out of range for {} logits",
            z.len()
        )));
    }
    Ok(cw_margin(z, target).max(-kappa))
}

fn cw_margin(z: &[f64], target: usize) -> f64 {
    let mut other = f64::NEG_INFINITY;
    for (j, &v) in z.iter().enumerate() {
        if j != target && v > other {
            other = v;
        }
    }
    z[target] - other
}

fn shrink(x: f64) -> f64 {
    let lim = 0.5 - TANH_SHRINK;
    x.clamp(-lim, lim)
}

fn reparam_into(w: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        w.iter()
            .zip(x)
            .map(|(wi, xi)| 0.5 * open_tanh((2.0 * shrink(*xi)).atanh() + wi)),
    );
}

/// `tanh` kept strictly inside `(-1, 1)` where it would round to `+-1`.
fn open_tanh(v: f64) -> f64 {
    let t = v.tanh();
    if t.abs() >= 1.0 {
        t.signum() * (1.0 - f64::EPSILON / 2.0)
    } else {
        t
    }
}

/// `0.5 tanh(atanh(2x) + w)` componentwise.
pub fn tanh_reparam(w: &DenseVector, x: &DenseVector) -> Result<DenseVector> {
    w.check_dim(x)?;
    if let Some(i) = (0..x.dim()).find(|&i| x[i].abs() > 0.5) {
        return Err(ZoError::Domain(format!(
            "input coordinate {i} = {} lies outside [-0.5, 0.5]",
            x[i]
        )));
    }
    let mut out = Vec::with_capacity(x.dim());
    reparam_into(w.as_slice(), x.as_slice(), &mut out);
    DenseVector::new(out)
}

#[derive(Clone, Debug)]
pub struct AttackProblem {
    pub model: TinyMlp,
    pub images: Vec<DenseVector>,
    pub labels: Vec<usize>,
    pub lambda: f64,
    pub kappa: f64,
    pub mode: AttackMode,
}

impl AttackProblem {
    pub fn m(&self) -> usize {
        self.images.len()
    }

    /// Adversarial input for image `i` under the optimization variable `z`.
    pub fn adversarial(&self, z: &[f64], i: usize) -> Vec<f64> {
        let x = self.images[i].as_slice();
        match self.mode {
            AttackMode::Constrained => x.iter().zip(z).map(|(a, b)| a + b).collect(),
            AttackMode::Unconstrained => {
                let mut out = Vec::with_capacity(x.len());
                reparam_into(z, x, &mut out);
                out
            }
        }
    }

    fn margin(&self, adv: &[f64], i: usize) -> f64 {
        let z = self
            .model
            .forward(adv)
            .expect("dimension checked at construction");
        cw_margin(&z, self.labels[i])
    }

    /// The attack-loss component `cw(x'_i)` for image `i`.
    pub fn cw_term(&self, z: &[f64], i: usize) -> f64 {
        self.margin(&self.adversarial(z, i), i).max(-self.kappa)
    }

    /// One sample of the finite-sum objective.
    pub fn sample_loss(&self, z: &[f64], i: usize) -> f64 {
        let adv = self.adversarial(z, i);
        let cw = self.margin(&adv, i).max(-self.kappa);
        match self.mode {
            AttackMode::Constrained => self.lambda * cw + sq_norm(z),
            AttackMode::Unconstrained => {
                let x = self.images[i].as_slice();
                let dist: f64 = adv.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                self.lambda * (cw + dist)
            }
        }
    }

    /// `|delta|^2` (constrained) or the mean per-image `|x'_i - x_i|^2`.
    pub fn distortion(&self, z: &[f64]) -> f64 {
        match self.mode {
            AttackMode::Constrained => sq_norm(z),
            AttackMode::Unconstrained => {
                let mut acc = 0.0;
                for i in 0..self.m() {
                    let adv = self.adversarial(z, i);
                    let x = self.images[i].as_slice();
                    acc += adv
                        .iter()
                        .zip(x)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
                acc / self.m() as f64
            }
        }
    }

    /// Images whose true class no longer wins (`cw` term at or below zero).
    pub fn success_count(&self, z: &[f64]) -> usize {
        (0..self.m())
            .filter(|&i| self.margin(&self.adversarial(z, i), i) <= 0.0)
            .count()
    }

    pub fn all_fooled(&self, z: &[f64]) -> bool {
        self.success_count(z) == self.m()
    }
}

fn sq_norm(z: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in z {
        acc += v * v;
    }
    acc
}

/// Build the finite-sum attack objective over `images` (`M = images.len()`).
pub fn make_attack_problem(
    model: &TinyMlp,
    images: &[DenseVector],
    labels: &[usize],
    lambda: f64,
    kappa: f64,
    mode: AttackMode,
) -> Result<ProblemSpec> {
    if images.is_empty() {
        return Err(ZoError::InvalidArgument(
            "attack needs at least one image".into(),
        ));
    }
    if images.len() != labels.len() {
        return Err(ZoError::InvalidArgument(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if !(lambda > 0.0) || !(kappa >= 0.0) {
        return Err(ZoError::InvalidArgument(format!(
            "need lambda > 0 and kappa >= 0, got {lambda}, {kappa}"
        )));
    }
    let d = model.input_dim();
    for (i, (x, &t)) in images.iter().zip(labels).enumerate() {
        if x.dim() != d {
            return Err(ZoError::DimensionMismatch {
                expected: d,
                got: x.dim(),
            });
        }
        if x.iter().any(|v| v.abs() > 0.5) {
            return Err(ZoError::InvalidArgument(format!(
                "image {i} lies outside [-0.5, 0.5]^d"
            )));
        }
        if t >= model.classes() {
            return Err(ZoError::InvalidArgument(format!(
                "label {t} of image {i} out of range"
            )));
        }
    }
    let problem = Arc::new(AttackProblem {
        model: model.clone(),
        images: images.to_vec(),
        labels: labels.to_vec(),
        lambda,
        kappa,
        mode,
    });
    let m = problem.m();
    let p = problem.clone();
    let objective =
        StochasticObjective::new(d, SampleSpace::Finite(m), move |z, i| p.sample_loss(z, i))?;

    let constraint = match mode {
        AttackMode::Constrained => {
            let lo = (0..d)
                .map(|k| {
                    images
                        .iter()
                        .map(|x| -0.5 - x[k])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let hi = (0..d)
                .map(|k| {
                    images
                        .iter()
                        .map(|x| 0.5 - x[k])
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            ConstraintSet::new_box(DenseVector::new(lo)?, DenseVector::new(hi)?)?
        }
        AttackMode::Unconstrained => ConstraintSet::Unconstrained,
    };
    ProblemSpec {
        objective,
        constraint,
        metadata: ProblemMetadata::default(),
        initial: DenseVector::zeros(d),
        tag: format!("attack-{}-m{m}", mode.name()),
        attack: Some(problem),
    }
    .validated()
}

/// The pinned victim network (16 inputs, 12 tanh hidden units, 4 classes).
pub fn victim_model() -> TinyMlp {
    TinyMlp::from_json(PINNED_VICTIM).expect("pinned victim model parses")
}

/// Regenerate the victim from its seed; equals [`victim_model`].
pub fn seeded_victim() -> Result<TinyMlp> {
    TinyMlp::seeded(&VICTIM_SIZES, VICTIM_GAIN, VICTIM_SEED)
}

/// Ten seeded inputs in `[-0.25, 0.25]^16`, labelled with the victim's own
/// prediction, keeping only inputs with a clear top-class margin.
pub fn victim_inputs() -> (Vec<DenseVector>, Vec<usize>) {
    let model = victim_model();
    let mut rng = RngStream::new(VICTIM_SEED ^ 0x5eed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    while images.len() < VICTIM_IMAGES {
        let x: Vec<f64> = (0..model.input_dim())
            .map(|_| 0.5 * rng.next_f64() - 0.25)
            .collect();
        let z = model.forward(&x).expect("input size matches");
        let t = argmax(&z);
        if cw_margin(&z, t) >= 0.1 {
            images.push(DenseVector::from_raw(x));
            labels.push(t);
        }
    }
    (images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cw_examples() {
        assert!((cw_loss(&v(&[2.0, 0.5]), 0, 0.0).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(cw_loss(&v(&[0.5, 2.0]), 0, 0.0).unwrap(), 0.0);
        assert!((cw_loss(&v(&[0.5, 2.0]), 0, 0.3).unwrap() + 0.3).abs() < 1e-15);
        assert!(cw_loss(&v(&[1.0]), 0, 0.0).is_err());
        assert!(cw_loss(&v(&[1.0, 2.0]), 2, 0.0).is_err());
    }

    #[test]
    fn reparam_identity_and_saturation() {
        let x = v(&[0.1, -0.3, 0.49, 0.0]);
        let out = tanh_reparam(&DenseVector::zeros(4), &x).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-12);
        let sat = tanh_reparam(&DenseVector::filled(4, 20.0), &x).unwrap();
        for i in 0..4 {
            assert!((sat[i] - 0.5).abs() < 1e-8 && sat[i] < 0.5);
        }
        assert!(tanh_reparam(&DenseVector::zeros(1), &v(&[0.6])).is_err());
        // boundary input is shrunk, not rejected
        let edge = tanh_reparam(&v(&[0.0]), &v(&[0.5])).unwrap();
        assert!(edge[0] < 0.5);
    }

    #[test]
    fn pinned_victim_matches_seed() {
        assert_eq!(victim_model(), seeded_victim().unwrap());
    }

    #[test]
    fn victim_inputs_are_correct_and_feasible() {
        let model = victim_model();
        let (images, labels) = victim_inputs();
        assert_eq!(images.len(), 10);
        for (x, &t) in images.iter().zip(&labels) {
            assert_eq!(model.predict(x.as_slice()).unwrap(), t);
            assert!(x.iter().all(|v| v.abs() <= 0.25));
        }
    }

    #[test]
    fn zero_perturbation_objective() {
        let model = victim_model();
        let (images, labels) = victim_inputs();
        for mode in [AttackMode::Constrained, AttackMode::Unconstrained] {
            let p = make_attack_problem(&model, &images, &labels, 10.0, 0.0, mode).unwrap();
            let zero = DenseVector::zeros(16);
            let mut expect = 0.0;
            for (x, &t) in images.iter().zip(&labels) {
                let z = DenseVector::new(model.forward(x.as_slice()).unwrap()).unwrap();
                expect += cw_loss(&z, t, 0.0).unwrap();
            }
            expect *= 10.0 / images.len() as f64;
            let got = p.objective.full_loss(&zero).unwrap();
            assert!((got - expect).abs() < 1e-12, "{mode:?}: {got} vs {expect}");
            let atk = p.attack.as_ref().unwrap();
            assert!(atk.distortion(zero.as_slice()) < 1e-20);
            assert_eq!(atk.success_count(zero.as_slice()), 0);
        }
    }

    #[test]
    fn intersection_box_on_delta() {
        let model = victim_model();
        let (images, labels) = victim_inputs();
        let p = make_attack_problem(
            &model,
            &images[..3],
            &labels[..3],
            10.0,
            0.0,
            AttackMode::Constrained,
        )
        .unwrap();
        match &p.constraint {
            ConstraintSet::Box { lo, hi } => {
                for k in 0..16 {
                    let elo = images[..3]
                        .iter()
                        .map(|x| -0.5 - x[k])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let ehi = images[..3]
                        .iter()
                        .map(|x| 0.5 - x[k])
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(lo[k], elo);
                    assert_eq!(hi[k], ehi);
                }
            }
            other => panic!("expected box, got {other:?}"),
        }
        assert!(p.constraint.is_member(&DenseVector::zeros(16)));
    }

    #[test]
    fn rejects_infeasible_images() {
        let model = victim_model();
        let bad = vec![DenseVector::filled(16, 0.7)];
        assert!(
            make_attack_problem(&model, &bad, &[0], 10.0, 0.0, AttackMode::Constrained).is_err()
        );
    }
}
