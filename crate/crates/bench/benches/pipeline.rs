//! Per-frame cost of the tracking pipeline and of one DE recalibration.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use teso_core::filter::tick;
use teso_core::globalopt::{solve, DeConfig};
use teso_core::loss::evaluate;
use teso_core::matching::{knn, prepare};
use teso_core::simulator::{generate_frame, SceneConfig};
use teso_core::{EssentialState, FilterState, Frame, KnnOptions, LossMode, TrackerConfig};

/// A carla-drift frame with about `n` keypoints per side.
fn frame(n: usize) -> (SceneConfig, Frame) {
    let scene = SceneConfig {
        n_points: n,
        seed: 42,
        ..SceneConfig::carla_drift()
    };
    let f = generate_frame(&scene, &scene.reference_pose(), 0);
    (scene, f)
}

fn per_frame(c: &mut Criterion) {
    let (scene, f) = frame(1000);
    let cfg = TrackerConfig::default();
    let state = EssentialState::from_pose(&scene.reference_pose()).unwrap();
    let prepared = prepare(&f, &scene.k_left, &scene.k_right, &cfg.knn).unwrap();

    let mut g = c.benchmark_group("per_frame_1000kp");
    g.bench_function("knn_k5_dim128", |b| {
        b.iter(|| knn(black_box(&f.left_desc), black_box(&f.right_desc), 5).unwrap())
    });
    g.bench_function("prepare", |b| {
        b.iter(|| prepare(black_box(&f), &scene.k_left, &scene.k_right, &KnnOptions::default()).unwrap())
    });
    for mode in [LossMode::KernelKnn, LossMode::KernelPairs, LossMode::SquaredPairs] {
        let mut kernel = cfg.kernel;
        kernel.mode = mode;
        g.bench_function(format!("evaluate_{}", mode.as_str()), |b| {
            b.iter(|| evaluate(black_box(&state), black_box(&prepared), &kernel).unwrap())
        });
    }
    let eval = evaluate(&state, &prepared, &cfg.kernel).unwrap();
    g.bench_function("tick", |b| {
        b.iter_batched(
            || {
                let mut filter = FilterState::new();
                filter.frame_count = 100;
                filter.v = [1.0; 5];
                (filter, state)
            },
            |(mut filter, mut manifold)| tick(&mut filter, &mut manifold, Some(black_box(&eval)), &cfg.filter),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("full_step", |b| {
        let mut filter = FilterState::new();
        let mut manifold = state;
        b.iter(|| {
            let p = prepare(black_box(&f), &scene.k_left, &scene.k_right, &cfg.knn).unwrap();
            let e = evaluate(&manifold, &p, &cfg.kernel).ok();
            tick(&mut filter, &mut manifold, e.as_ref(), &cfg.filter)
        })
    });
    g.finish();
}

fn recalibration(c: &mut Criterion) {
    let (scene, f) = frame(640);
    let cfg = TrackerConfig::default();
    let state = EssentialState::from_pose(&scene.reference_pose()).unwrap();
    let prepared = prepare(&f, &scene.k_left, &scene.k_right, &cfg.knn).unwrap();
    let mut g = c.benchmark_group("de");
    g.sample_size(10);
    g.bench_function("solve_default_640kp", |b| {
        b.iter(|| solve(&state, black_box(&prepared), &cfg.kernel, &DeConfig::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, per_frame, recalibration);
criterion_main!(benches);
