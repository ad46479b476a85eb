//! Shared fixtures for the benchmark targets.

use etalon_core::model::{TransmittanceParams, WaveRegime, WavenumberGrid};
use etalon_core::simulate::{
    generate_truth, simulate_datacube, Datacube, DeviceLayout, LayoutConfig, NoiseModel,
    PowerSpec, TruthSpec,
};
use etalon_core::stats::{degenerate_statistics, PixelStatistics};

/// 343-point sweep matching the near-infrared prototype acquisitions.
pub fn bench_grid() -> WavenumberGrid {
    WavenumberGrid::regular(6250.0, 10000.0, 343).unwrap()
}

pub fn bench_params() -> TransmittanceParams {
    TransmittanceParams::new(
        vec![2.0, 0.2, -0.1],
        vec![0.13, 0.0, 0.0],
        2.4e-3,
        0.4,
    )
    .unwrap()
}

/// Noiseless raw series of the bench parameters on the bench grid.
pub fn bench_pixel(regime: WaveRegime) -> PixelStatistics {
    let grid = bench_grid();
    let params = bench_params();
    let y: Vec<f64> = grid
        .sigma()
        .iter()
        .map(|&s| etalon_core::model::transmittance_response(&params, s, regime, &grid).unwrap())
        .collect();
    degenerate_statistics(y).unwrap()
}

/// Small multi-aperture device for end-to-end benchmarks.
pub fn bench_device() -> (DeviceLayout, WavenumberGrid, Datacube) {
    let layout = DeviceLayout::build(LayoutConfig {
        n_interferometers: 8,
        thickness_step_nm: 500.0,
        base_thickness_nm: 5000.0,
        refractive_index: 1.0,
        focal_height: 16,
        focal_width: 32,
        subimage_height: 8,
        subimage_width: 8,
        angular_scale_rad_per_px: 0.0,
        optical_axis_offset_px: (0.0, 0.0),
    })
    .unwrap();
    let grid = bench_grid();
    let truth = generate_truth(
        &layout,
        &TruthSpec {
            gain_coeffs: vec![2.0, 0.2, -0.1],
            refl_coeffs: vec![0.13],
            phase_shift: 0.4,
            opd_tilt_per_column_cm: 0.0,
        },
    )
    .unwrap();
    let cube = simulate_datacube(
        &layout,
        &grid,
        &truth,
        WaveRegime::Infinite,
        &NoiseModel::None,
        &PowerSpec::default(),
        0,
    )
    .unwrap();
    (layout, grid, cube)
}
