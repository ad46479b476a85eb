//! Per-pixel sufficient statistics extracted from a characterization
//! datacube: the raw series `y`, the neighborhood mean `u` and the
//! flat-field statistic `w`, plus incident-power equalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::{Datacube, Rect};

/// The three per-acquisition series driving the characterization pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelStatistics {
    /// Raw pixel readings, one per acquisition.
    pub raw: Vec<f64>,
    /// Spatial mean over the kernel window around the pixel.
    pub neighborhood: Vec<f64>,
    /// Fringe-free focal-plane statistic (percentile of each frame).
    pub flat_field: Vec<f64>,
    pub pixel: (usize, usize),
    pub interferometer: Option<usize>,
}

impl PixelStatistics {
    pub fn new(
        raw: Vec<f64>,
        neighborhood: Vec<f64>,
        flat_field: Vec<f64>,
        pixel: (usize, usize),
        interferometer: Option<usize>,
    ) -> Result<Self> {
        if raw.len() != neighborhood.len() || raw.len() != flat_field.len() || raw.is_empty() {
            return Err(Error::ShapeMismatch(
                "pixel statistics series must have equal non-zero lengths".into(),
            ));
        }
        if raw
            .iter()
            .chain(neighborhood.iter())
            .chain(flat_field.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::ShapeMismatch(
                "pixel statistics must be finite".into(),
            ));
        }
        Ok(Self {
            raw,
            neighborhood,
            flat_field,
            pixel,
            interferometer,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Divide each frame by its incident power so the cube reads as if every
/// acquisition had carried unit energy. Idempotent.
pub fn equalize_power(cube: &Datacube) -> Result<Datacube> {
    let (h, w) = (cube.height(), cube.width());
    let mut frames = Vec::with_capacity(cube.frames().len());
    for i in 0..cube.n_acq() {
        let p = cube.incident_power()[i];
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::NonPositivePower);
        }
        frames.extend(cube.frame(i).iter().map(|v| v / p));
    }
    Datacube::new(
        cube.grid().clone(),
        h,
        w,
        frames,
        vec![1.0; cube.n_acq()],
    )
}

/// Raw acquisition series of one pixel: `y_i = frame_i[pixel]`.
pub fn raw_series(cube: &Datacube, pixel: (usize, usize)) -> Result<Vec<f64>> {
    let (row, col) = pixel;
    if !cube.in_bounds(row, col) {
        return Err(Error::PixelOutOfBounds(row, col));
    }
    Ok((0..cube.n_acq()).map(|i| cube.value(i, row, col)).collect())
}

/// Spatial mean over an odd `kernel`-sized window centered at the pixel.
///
/// The window is intersected with the frame and, when `bounds` names the
/// pixel's subimage, with that rectangle as well, so interferometers never
/// mix; the mean renormalizes by the surviving pixel count.
pub fn neighborhood_mean(
    cube: &Datacube,
    pixel: (usize, usize),
    kernel: usize,
    bounds: Option<Rect>,
) -> Result<Vec<f64>> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::EvenKernel(kernel));
    }
    let (row, col) = pixel;
    if !cube.in_bounds(row, col) {
        return Err(Error::PixelOutOfBounds(row, col));
    }
    let half = kernel / 2;
    let (mut r0, mut r1) = (row.saturating_sub(half), (row + half + 1).min(cube.height()));
    let (mut c0, mut c1) = (col.saturating_sub(half), (col + half + 1).min(cube.width()));
    if let Some(b) = bounds {
        if !b.contains(row, col) {
            return Err(Error::PixelOutOfBounds(row, col));
        }
        r0 = r0.max(b.row0);
        r1 = r1.min(b.row0 + b.height);
        c0 = c0.max(b.col0);
        c1 = c1.min(b.col0 + b.width);
    }
    let count = ((r1 - r0) * (c1 - c0)) as f64;
    let mut out = Vec::with_capacity(cube.n_acq());
    for i in 0..cube.n_acq() {
        let frame = cube.frame(i);
        let mut acc = 0.0;
        for r in r0..r1 {
            let base = r * cube.width();
            acc += frame[base + c0..base + c1].iter().sum::<f64>();
        }
        out.push(acc / count);
    }
    Ok(out)
}

/// Nearest-rank percentile of each frame over the whole focal plane.
pub fn flat_field_statistic(cube: &Datacube, percentile: f64) -> Result<Vec<f64>> {
    let region = Rect {
        row0: 0,
        col0: 0,
        height: cube.height(),
        width: cube.width(),
    };
    flat_field_statistic_in(cube, percentile, region)
}

/// Nearest-rank percentile of each frame restricted to `region` (used when
/// the flat-field statistic is taken per subimage instead of globally).
pub fn flat_field_statistic_in(cube: &Datacube, percentile: f64, region: Rect) -> Result<Vec<f64>> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidPercentile(percentile));
    }
    if region.height == 0
        || region.width == 0
        || region.row0 + region.height > cube.height()
        || region.col0 + region.width > cube.width()
    {
        return Err(Error::EmptyFrame);
    }
    let n_px = region.height * region.width;
    // ceil(p/100 * n) in exact integer arithmetic would need p rational; the
    // float version is exact for the integer percentiles used in practice.
    let rank = ((percentile / 100.0 * n_px as f64).ceil() as usize).clamp(1, n_px);
    let mut out = Vec::with_capacity(cube.n_acq());
    let mut buf = vec![0.0f64; n_px];
    for i in 0..cube.n_acq() {
        let frame = cube.frame(i);
        let mut at = 0;
        for r in region.row0..region.row0 + region.height {
            let base = r * cube.width();
            buf[at..at + region.width]
                .copy_from_slice(&frame[base + region.col0..base + region.col0 + region.width]);
            at += region.width;
        }
        let (_, v, _) = buf.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
        out.push(*v);
    }
    Ok(out)
}

/// One-dimensional fallback when no spatial context exists: `u = y` and
/// `w` constant at the mean of `y`.
pub fn degenerate_statistics(raw: Vec<f64>) -> Result<PixelStatistics> {
    if raw.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let flat = vec![mean; raw.len()];
    PixelStatistics::new(raw.clone(), raw, flat, (0, 0), None)
}
