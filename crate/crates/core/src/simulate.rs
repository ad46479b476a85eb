//! Synthetic characterization acquisitions: a device layout made of a
//! staircase of Fabry-Perot interferometers tiled over a focal plane,
//! monochromatic flat-field frame generation, incident-power curves and
//! sensor noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    mean_scale_factor, opd_from_geometry, phase, transmittance, TransmittanceParams, WaveRegime,
    WavenumberGrid,
};

pub const CM_PER_NM: f64 = 1e-7;

/// Axis-aligned pixel rectangle (half-open on both ends).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0
            && row < self.row0 + self.height
            && col >= self.col0
            && col < self.col0 + self.width
    }
}

/// User-facing description of a device; validated into a [`DeviceLayout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub n_interferometers: usize,
    /// Staircase thickness increment, nm.
    pub thickness_step_nm: f64,
    /// Thickness of interferometer 0, nm.
    pub base_thickness_nm: f64,
    #[serde(default = "default_refractive_index")]
    pub refractive_index: f64,
    pub focal_height: usize,
    pub focal_width: usize,
    pub subimage_height: usize,
    pub subimage_width: usize,
    /// Incidence angle per pixel of radial distance from the optical axis.
    #[serde(default)]
    pub angular_scale_rad_per_px: f64,
    /// Offset of the true optical axis from the subimage geometric center,
    /// (rows, cols), applied uniformly to every subimage.
    #[serde(default)]
    pub optical_axis_offset_px: (f64, f64),
}

fn default_refractive_index() -> f64 {
    1.0
}

/// Validated device geometry. Interferometer `k` has thickness
/// `d0 + k * step` and occupies the `k`-th row-major subimage slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLayout {
    config: LayoutConfig,
    grid_rows: usize,
    grid_cols: usize,
}

impl DeviceLayout {
    pub fn build(config: LayoutConfig) -> Result<Self> {
        let c = &config;
        if c.n_interferometers == 0 {
            return Err(Error::InvalidParameter(
                "layout needs at least one interferometer".into(),
            ));
        }
        for (name, v) in [
            ("thickness_step_nm", c.thickness_step_nm),
            ("base_thickness_nm", c.base_thickness_nm),
            ("angular_scale_rad_per_px", c.angular_scale_rad_per_px),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !c.refractive_index.is_finite() || c.refractive_index < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "refractive_index must be >= 1, got {}",
                c.refractive_index
            )));
        }
        if c.focal_height == 0 || c.focal_width == 0 || c.subimage_height == 0
            || c.subimage_width == 0
        {
            return Err(Error::InvalidParameter(
                "focal plane and subimage dimensions must be positive".into(),
            ));
        }
        if !c.optical_axis_offset_px.0.is_finite() || !c.optical_axis_offset_px.1.is_finite() {
            return Err(Error::InvalidParameter(
                "optical axis offset must be finite".into(),
            ));
        }
        let grid_rows = c.focal_height / c.subimage_height;
        let grid_cols = c.focal_width / c.subimage_width;
        let capacity = grid_rows * grid_cols;
        if c.n_interferometers > capacity {
            return Err(Error::TilingOverflow {
                needed: c.n_interferometers,
                capacity,
            });
        }
        Ok(Self {
            config,
            grid_rows,
            grid_cols,
        })
    }

    pub fn config(&self) -> &LayoutConfig {
        &self.config
    }

    pub fn n_interferometers(&self) -> usize {
        self.config.n_interferometers
    }

    pub fn focal_height(&self) -> usize {
        self.config.focal_height
    }

    pub fn focal_width(&self) -> usize {
        self.config.focal_width
    }

    /// Subimage grid shape (rows, cols).
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    /// Row-major slot of interferometer `k` in the subimage grid.
    pub fn slot(&self, k: usize) -> (usize, usize) {
        (k / self.grid_cols, k % self.grid_cols)
    }

    pub fn thickness_nm(&self, k: usize) -> f64 {
        self.config.base_thickness_nm + k as f64 * self.config.thickness_step_nm
    }

    /// Nominal normal-incidence OPD of interferometer `k`, cm.
    pub fn nominal_opd_cm(&self, k: usize) -> f64 {
        opd_from_geometry(
            self.config.refractive_index,
            self.thickness_nm(k) * CM_PER_NM,
            0.0,
        )
    }

    /// Nominal OPD increment between successive interferometers, cm.
    pub fn nominal_opd_step_cm(&self) -> f64 {
        2.0 * self.config.refractive_index * self.config.thickness_step_nm * CM_PER_NM
    }

    pub fn subimage_rect(&self, k: usize) -> Rect {
        let (r, c) = self.slot(k);
        Rect {
            row0: r * self.config.subimage_height,
            col0: c * self.config.subimage_width,
            height: self.config.subimage_height,
            width: self.config.subimage_width,
        }
    }

    /// Optical axis of subimage `k` in focal-plane coordinates (fractional).
    pub fn optical_axis(&self, k: usize) -> (f64, f64) {
        let rect = self.subimage_rect(k);
        (
            rect.row0 as f64 + (rect.height as f64 - 1.0) / 2.0 + self.config.optical_axis_offset_px.0,
            rect.col0 as f64 + (rect.width as f64 - 1.0) / 2.0 + self.config.optical_axis_offset_px.1,
        )
    }

    /// Pixel closest to the optical axis, clamped into the subimage.
    pub fn central_pixel(&self, k: usize) -> (usize, usize) {
        let rect = self.subimage_rect(k);
        let (ar, ac) = self.optical_axis(k);
        let row = (ar.round().max(rect.row0 as f64) as usize).min(rect.row0 + rect.height - 1);
        let col = (ac.round().max(rect.col0 as f64) as usize).min(rect.col0 + rect.width - 1);
        (row, col)
    }

    /// Interferometer owning the pixel, if any.
    pub fn interferometer_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.grid_rows * self.config.subimage_height
            || col >= self.grid_cols * self.config.subimage_width
        {
            return None;
        }
        let k = (row / self.config.subimage_height) * self.grid_cols
            + col / self.config.subimage_width;
        (k < self.config.n_interferometers).then_some(k)
    }

    /// Incidence angle at a pixel of subimage `k`: angular scale times the
    /// radial distance from the optical axis.
    pub fn incidence_angle(&self, k: usize, row: usize, col: usize) -> f64 {
        let (ar, ac) = self.optical_axis(k);
        let dr = row as f64 - ar;
        let dc = col as f64 - ac;
        self.config.angular_scale_rad_per_px * (dr * dr + dc * dc).sqrt()
    }

    /// Geometric per-pixel OPD `2 n d_k cos(theta)`, maximal at the axis.
    pub fn pixel_opd_cm(&self, k: usize, row: usize, col: usize) -> f64 {
        opd_from_geometry(
            self.config.refractive_index,
            self.thickness_nm(k) * CM_PER_NM,
            self.incidence_angle(k, row, col),
        )
    }
}

/// Sensor noise applied to simulated frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Zero-mean Gaussian noise with standard deviation expressed relative
    /// to the mean of the noiseless datacube.
    AdditiveGaussian { relative_std: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::AdditiveGaussian { relative_std } => {
                if relative_std.is_finite() && *relative_std >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "relative_std must be finite and non-negative, got {relative_std}"
                    )))
                }
            }
        }
    }
}

/// Relative incident power of the source across the wavenumber sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerSpec {
    Constant { value: f64 },
    /// Lamp-like smooth curve `base + amplitude * exp(-(s-center)^2/(2w^2))`.
    GaussianBump {
        base: f64,
        amplitude: f64,
        center_cm1: f64,
        width_cm1: f64,
    },
}

impl Default for PowerSpec {
    fn default() -> Self {
        PowerSpec::Constant { value: 1.0 }
    }
}

impl PowerSpec {
    pub fn sample(&self, grid: &WavenumberGrid) -> Result<Vec<f64>> {
        let power: Vec<f64> = match *self {
            PowerSpec::Constant { value } => vec![value; grid.len()],
            PowerSpec::GaussianBump {
                base,
                amplitude,
                center_cm1,
                width_cm1,
            } => {
                if !(width_cm1.is_finite() && width_cm1 > 0.0) {
                    return Err(Error::InvalidParameter(
                        "power bump width must be positive".into(),
                    ));
                }
                grid.sigma()
                    .iter()
                    .map(|&s| {
                        let z = (s - center_cm1) / width_cm1;
                        base + amplitude * (-0.5 * z * z).exp()
                    })
                    .collect()
            }
        };
        if power.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::NonPositivePower);
        }
        Ok(power)
    }
}

/// Ground-truth parameter generation for a whole device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub gain_coeffs: Vec<f64>,
    pub refl_coeffs: Vec<f64>,
    #[serde(default)]
    pub phase_shift: f64,
    /// Optional plate-tilt signature: OPD perturbation linear in the column
    /// index of the subimage slot, cm per column, centered on the row.
    #[serde(default)]
    pub opd_tilt_per_column_cm: f64,
}

/// Per-interferometer truth parameters: nominal staircase OPD (optionally
/// tilted) with shared gain/reflectivity polynomials.
pub fn generate_truth(layout: &DeviceLayout, spec: &TruthSpec) -> Result<Vec<TransmittanceParams>> {
    let n = spec.gain_coeffs.len().max(spec.refl_coeffs.len());
    if n == 0 {
        return Err(Error::InvalidParameter(
            "truth polynomials must not be empty".into(),
        ));
    }
    let mut gain = spec.gain_coeffs.clone();
    let mut refl = spec.refl_coeffs.clone();
    gain.resize(n, 0.0);
    refl.resize(n, 0.0);
    let (_, cols) = layout.grid_shape();
    (0..layout.n_interferometers())
        .map(|k| {
            let (_, col) = layout.slot(k);
            let tilt = spec.opd_tilt_per_column_cm * (col as f64 - (cols as f64 - 1.0) / 2.0);
            TransmittanceParams::new(
                gain.clone(),
                refl.clone(),
                layout.nominal_opd_cm(k) + tilt,
                spec.phase_shift,
            )
        })
        .collect()
}

/// A stack of flat-field acquisitions over the focal plane, one frame per
/// monochromator wavenumber. Frames are stored acquisition-major then
/// row-major, matching the on-disk payload exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Datacube {
    grid: WavenumberGrid,
    height: usize,
    width: usize,
    frames: Vec<f64>,
    incident_power: Vec<f64>,
}

impl Datacube {
    pub fn new(
        grid: WavenumberGrid,
        height: usize,
        width: usize,
        frames: Vec<f64>,
        incident_power: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        if frames.len() != n * height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} samples for {} frames of {}x{}, got {}",
                n * height * width,
                n,
                height,
                width,
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("frames contain non-finite values".into()));
        }
        if incident_power.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} incident power entries, got {}",
                n,
                incident_power.len()
            )));
        }
        if incident_power.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::NonPositivePower);
        }
        Ok(Self {
            grid,
            height,
            width,
            frames,
            incident_power,
        })
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn n_acq(&self) -> usize {
        self.grid.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn incident_power(&self) -> &[f64] {
        &self.incident_power
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let sz = self.height * self.width;
        &self.frames[i * sz..(i + 1) * sz]
    }

    pub fn value(&self, i: usize, row: usize, col: usize) -> f64 {
        self.frames[(i * self.height + row) * self.width + col]
    }

    pub fn in_bounds(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width
    }
}

/// Forward model of a device under monochromatic flat-field illumination.
///
/// Every pixel of subimage `k` sees the truth parameters of interferometer
/// `k` with the OPD scaled by `cos(theta)` of the pixel's incidence angle,
/// so the optical-axis pixel reproduces the truth response exactly. Pixels
/// outside every subimage read zero (background level).
pub struct Simulator {
    layout: DeviceLayout,
    grid: WavenumberGrid,
    truth: Vec<TransmittanceParams>,
    regime: WaveRegime,
    incident_power: Vec<f64>,
    /// Interferometer index per pixel, -1 where uncovered.
    owner: Vec<i32>,
    /// cos(incidence angle) per pixel (meaningful where owner >= 0).
    cos_angle: Vec<f64>,
}

impl Simulator {
    pub fn new(
        layout: DeviceLayout,
        grid: WavenumberGrid,
        truth: Vec<TransmittanceParams>,
        regime: WaveRegime,
        power: &PowerSpec,
    ) -> Result<Self> {
        regime.validate()?;
        if truth.len() != layout.n_interferometers() {
            return Err(Error::ShapeMismatch(format!(
                "layout has {} interferometers but truth has {} parameter sets",
                layout.n_interferometers(),
                truth.len()
            )));
        }
        for p in &truth {
            p.validate_on_grid(&grid)?;
        }
        let incident_power = power.sample(&grid)?;
        let (h, w) = (layout.focal_height(), layout.focal_width());
        let mut owner = vec![-1i32; h * w];
        let mut cos_angle = vec![0.0f64; h * w];
        for row in 0..h {
            for col in 0..w {
                if let Some(k) = layout.interferometer_at(row, col) {
                    owner[row * w + col] = k as i32;
                    cos_angle[row * w + col] = layout.incidence_angle(k, row, col).cos();
                }
            }
        }
        Ok(Self {
            layout,
            grid,
            truth,
            regime,
            incident_power,
            owner,
            cos_angle,
        })
    }

    pub fn layout(&self) -> &DeviceLayout {
        &self.layout
    }

    pub fn grid(&self) -> &WavenumberGrid {
        &self.grid
    }

    pub fn incident_power(&self) -> &[f64] {
        &self.incident_power
    }

    pub fn n_frames(&self) -> usize {
        self.grid.len()
    }

    /// Noiseless frame `i`, including the incident power factor.
    pub fn noiseless_frame(&self, i: usize) -> Vec<f64> {
        let sigma = self.grid.sigma()[i];
        let power = self.incident_power[i];
        // Per-interferometer factors at this wavenumber.
        let per_k: Vec<(f64, f64, f64, f64, f64)> = self
            .truth
            .iter()
            .map(|p| {
                let a = p.gain_at(sigma, &self.grid);
                let r = p.reflectivity_at(sigma, &self.grid);
                let scale = mean_scale_factor(r, self.regime).expect("validated truth");
                (a, r, scale, p.opd_cm(), p.phase_shift())
            })
            .collect();
        self.owner
            .iter()
            .zip(self.cos_angle.iter())
            .map(|(&k, &ca)| {
                if k < 0 {
                    0.0
                } else {
                    let (a, r, scale, opd, shift) = per_k[k as usize];
                    let phi = phase(sigma, opd * ca, shift);
                    a * scale * transmittance(r, phi, self.regime).expect("validated truth") * power
                }
            })
            .collect()
    }

    /// Mean of the noiseless cube; reference level for relative noise.
    pub fn noiseless_mean(&self) -> f64 {
        let total: f64 = (0..self.n_frames())
            .into_par_iter()
            .map(|i| self.noiseless_frame(i).iter().sum::<f64>())
            .sum();
        total / (self.n_frames() * self.layout.focal_height() * self.layout.focal_width()) as f64
    }

    /// Full datacube; bit-reproducible for a given seed regardless of the
    /// number of worker threads.
    pub fn datacube(&self, noise: &NoiseModel, seed: u64) -> Result<Datacube> {
        noise.validate()?;
        let mut frames: Vec<f64> = (0..self.n_frames())
            .into_par_iter()
            .flat_map_iter(|i| self.noiseless_frame(i))
            .collect();
        let sigma = noise_sigma(noise, mean_of(&frames));
        if sigma > 0.0 {
            let sz = self.layout.focal_height() * self.layout.focal_width();
            frames
                .par_chunks_mut(sz)
                .enumerate()
                .for_each(|(i, frame)| add_frame_noise(frame, sigma, seed, i));
        }
        Datacube::new(
            self.grid.clone(),
            self.layout.focal_height(),
            self.layout.focal_width(),
            frames,
            self.incident_power.clone(),
        )
    }
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Absolute noise standard deviation for a given noiseless cube mean.
pub fn noise_sigma(noise: &NoiseModel, noiseless_mean: f64) -> f64 {
    match noise {
        NoiseModel::None => 0.0,
        NoiseModel::AdditiveGaussian { relative_std } => relative_std * noiseless_mean,
    }
}

/// Add zero-mean Gaussian noise to one frame. Each frame uses its own
/// counter-mode RNG stream, so generation order and thread count do not
/// affect the output.
pub fn add_frame_noise(frame: &mut [f64], sigma: f64, seed: u64, frame_index: usize) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index as u64 + 1);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in frame.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

/// Convenience wrapper building the simulator and generating the cube.
pub fn simulate_datacube(
    layout: &DeviceLayout,
    grid: &WavenumberGrid,
    truth: &[TransmittanceParams],
    regime: WaveRegime,
    noise: &NoiseModel,
    power: &PowerSpec,
    seed: u64,
) -> Result<Datacube> {
    Simulator::new(
        layout.clone(),
        grid.clone(),
        truth.to_vec(),
        regime,
        power,
    )?
    .datacube(noise, seed)
}

/// Sampling-criterion check for a layout/grid pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NyquistReport {
    pub pass: bool,
    /// `(1 / (2 * max OPD)) / mean step`; > 1 means properly sampled.
    pub margin: f64,
    pub max_opd_cm: f64,
    pub bound_cm1: f64,
}

/// Check that the mean wavenumber step samples the largest nominal OPD
/// without aliasing: step < 1/(2 * opd_max).
pub fn nyquist_check(layout: &DeviceLayout, grid: &WavenumberGrid) -> NyquistReport {
    let max_opd_cm = layout.nominal_opd_cm(layout.n_interferometers() - 1);
    let bound_cm1 = if max_opd_cm > 0.0 {
        1.0 / (2.0 * max_opd_cm)
    } else {
        f64::INFINITY
    };
    let margin = bound_cm1 / grid.mean_step();
    NyquistReport {
        pass: margin > 1.0,
        margin,
        max_opd_cm,
        bound_cm1,
    }
}
