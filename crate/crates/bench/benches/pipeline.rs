use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use etalon_bench::{bench_device, bench_grid, bench_params, bench_pixel};
use etalon_core::estimate::{
    characterize_device, characterize_pixel, default_opd_interval, periodogram_opd, refine,
    IrcaConfig, PixelSelector,
};
use etalon_core::lm::LmConfig;
use etalon_core::model::{transmittance_response, WaveRegime};

fn response_evaluation(c: &mut Criterion) {
    let grid = bench_grid();
    let params = bench_params();
    let mut group = c.benchmark_group("response_curve_343pts");
    for regime in [WaveRegime::Two, WaveRegime::Finite(10), WaveRegime::Infinite] {
        group.bench_function(regime.to_string(), |b| {
            b.iter(|| {
                let mut acc = 0.0;
                for &s in grid.sigma() {
                    acc += transmittance_response(black_box(&params), s, regime, &grid).unwrap();
                }
                acc
            })
        });
    }
    group.finish();
}

fn periodogram_search(c: &mut Criterion) {
    let grid = bench_grid();
    let params = bench_params();
    let stats = bench_pixel(WaveRegime::Two);
    let v: Vec<f64> = stats.raw.iter().map(|y| y / 2.0 - 1.0).collect();
    let full = default_opd_interval(&grid, None);
    let nominal = default_opd_interval(&grid, Some(params.opd_cm()));
    c.bench_function("periodogram_full_interval_x8", |b| {
        b.iter(|| periodogram_opd(black_box(&v), &grid, full, 8).unwrap())
    });
    c.bench_function("periodogram_nominal_interval_x8", |b| {
        b.iter(|| periodogram_opd(black_box(&v), &grid, nominal, 8).unwrap())
    });
}

fn lm_refinement(c: &mut Criterion) {
    let grid = bench_grid();
    let truth = bench_params();
    let stats = bench_pixel(WaveRegime::Infinite);
    let start = truth
        .with_opd(truth.opd_cm() * 1.0005)
        .unwrap();
    c.bench_function("refine_infinite_343pts", |b| {
        b.iter(|| {
            refine(
                black_box(&stats.raw),
                &grid,
                &start,
                WaveRegime::Infinite,
                &LmConfig::default(),
                false,
            )
            .unwrap()
        })
    });
}

fn pixel_pipeline(c: &mut Criterion) {
    let grid = bench_grid();
    let truth = bench_params();
    let stats = bench_pixel(WaveRegime::Infinite);
    let config = IrcaConfig {
        degree: 2,
        regime: WaveRegime::Infinite,
        ..IrcaConfig::default()
    };
    let interval = default_opd_interval(&grid, Some(truth.opd_cm()));
    c.bench_function("characterize_pixel", |b| {
        b.iter(|| characterize_pixel(black_box(&stats), &grid, &config, interval).unwrap())
    });
}

fn device_pipeline(c: &mut Criterion) {
    let (layout, _grid, cube) = bench_device();
    let config = IrcaConfig {
        degree: 2,
        regime: WaveRegime::Infinite,
        ..IrcaConfig::default()
    };
    c.bench_function("characterize_device_8_central", |b| {
        b.iter(|| {
            characterize_device(black_box(&cube), &layout, &config, &PixelSelector::Central)
                .unwrap()
        })
    });
}

criterion_group!(
    benches,
    response_evaluation,
    periodogram_search,
    lm_refinement,
    pixel_pipeline,
    device_pipeline
);
criterion_main!(benches);
