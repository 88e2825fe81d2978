use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use zoopt_bench::{constraint_sets, random_metric, random_point};
use zoopt_core::estimators::{averaged_on_batch, Directions};
use zoopt_core::geometry::{project_euclidean, project_mahalanobis};
use zoopt_core::numkit::sample_unit_sphere;
use zoopt_core::optimizers::{adamm_update, run_optimizer, AdaMMState};
use zoopt_core::problems::{make_attack_problem, make_quadratic, victim_inputs, victim_model, AttackMode};
use zoopt_core::{Algorithm, OptConfig, RngStream};

fn sphere(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_unit_sphere");
    for d in [10, 100, 1000] {
        let mut rng = RngStream::new(1);
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, &d| {
            b.iter(|| sample_unit_sphere(d, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn estimator(c: &mut Criterion) {
    let mut g = c.benchmark_group("averaged_two_point");
    let p = make_quadratic(50, 4.0, 1).unwrap();
    let x = p.initial.clone();
    for q in [1, 10] {
        let mut rng = RngStream::new(2);
        g.bench_with_input(BenchmarkId::new("d50_q", q), &q, |b, &q| {
            b.iter(|| averaged_on_batch(&p.objective, &x, 1e-3, &[0], q, Directions::Sphere, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn projections(c: &mut Criterion) {
    let mut g = c.benchmark_group("projection");
    let d = 64;
    let mut rng = RngStream::new(3);
    let metric = random_metric(d, &mut rng);
    let y = random_point(d, 3.0, &mut rng);
    for (name, set) in constraint_sets(d, &mut rng) {
        g.bench_function(format!("euclidean_{name}"), |b| b.iter(|| project_euclidean(&set, black_box(&y)).unwrap()));
        g.bench_function(format!("weighted_{name}"), |b| {
            b.iter(|| project_mahalanobis(&set, &metric, black_box(&y)).unwrap())
        });
    }
    g.finish();
}

fn adamm_step(c: &mut Criterion) {
    let d = 64;
    let mut rng = RngStream::new(4);
    let sets = constraint_sets(d, &mut rng);
    let cfg = OptConfig::new(Algorithm::ZoAdaMM);
    let state = AdaMMState::new(d, cfg.v0, cfg.vhat0);
    let x = random_point(d, 0.1, &mut rng);
    let grad = random_point(d, 1.0, &mut rng);
    let set = &sets[2].1;
    c.bench_function("adamm_update_ball_d64", |b| {
        b.iter(|| adamm_update(&state, &x, black_box(&grad), 0.01, cfg.beta1, &cfg, set).unwrap())
    });
}

fn full_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_optimizer");
    g.sample_size(10);
    let quad = make_quadratic(20, 1.0, 5).unwrap();
    for alg in [Algorithm::ZoAdaMM, Algorithm::ZoSgd, Algorithm::ZoSignSgd] {
        let cfg = OptConfig::new(alg);
        g.bench_function(format!("quadratic_d20_{}", alg.name()), |b| {
            b.iter(|| run_optimizer(&quad, &cfg, 20_000).unwrap())
        });
    }
    let (images, labels) = victim_inputs();
    let attack = make_attack_problem(&victim_model(), &images[..1], &labels[..1], 10.0, 0.0, AttackMode::Constrained).unwrap();
    let mut cfg = OptConfig::new(Algorithm::ZoAdaMM);
    cfg.measure = zoopt_core::optimizers::MeasureMode::Off;
    g.bench_function("attack_per_image_zo-adamm", |b| b.iter(|| run_optimizer(&attack, &cfg, 20_000).unwrap()));
    g.finish();
}

criterion_group!(benches, sphere, estimator, projections, adamm_step, full_runs);
criterion_main!(benches);
