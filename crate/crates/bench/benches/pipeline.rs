use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use uwbvo_core::ekf::{jacobian, predict_state};
use uwbvo_core::sim::{self, RayConfig};
use uwbvo_core::{
    detect_stop, run_filter, run_pipeline, ClusterParams, CtraFilter, CtraState, FilterParams, PipelineConfig,
    Position2D, RestartPolicy,
};

fn short_scenario() -> sim::ScenarioConfig {
    let mut sc = sim::worst_case_scenario();
    sc.plan.stops.truncate(7);
    sc.plan.closed = false;
    sc.plan.dwell_ms = 40_000;
    sc
}

fn ekf(c: &mut Criterion) {
    let params = FilterParams::default();
    let s = CtraState::new(100.0, 200.0, 250.0, 0.3, 0.2, 10.0);
    c.bench_function("predict_state", |b| b.iter(|| predict_state(black_box(&s), 0.037, 1e-6)));
    c.bench_function("jacobian", |b| b.iter(|| jacobian(black_box(&s), 0.037, 1e-6)));
    let f = CtraFilter::new(s, &params);
    let u = CtraState::new(110.0, 205.0, 240.0, 0.31, 0.2, 0.0);
    c.bench_function("filter_step", |b| b.iter(|| f.step(black_box(&u), 0.037).unwrap()));

    let run = sim::simulate(&short_scenario());
    c.bench_function("run_filter/uwb_stream", |b| {
        b.iter(|| run_filter(black_box(&run.streams.uwb), &params, &RestartPolicy::OnHover).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let ray = RayConfig {
        prob_per_stop: 1.0,
        length_mm: 600.0,
        count: 27,
        jitter_mm: 5.0,
    };
    let (pts, _) = sim::ray_cloud(Position2D::new(500.0, 500.0), 8.0, 1500, &ray, 7);
    c.bench_function("detect_stop/1500", |b| {
        b.iter(|| detect_stop(pts.iter().copied(), ClusterParams::default(), 0).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let sc = short_scenario();
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("simulate", |b| b.iter(|| sim::simulate(black_box(&sc))));
    let run = sim::simulate(&sc);
    group.bench_function("self_corrective", |b| {
        b.iter_batched(
            || run.streams.clone(),
            |pair| run_pipeline(&pair, &sc.plan, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, ekf, clustering, pipeline);
criterion_main!(benches);
