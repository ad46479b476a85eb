//! Fabry-Perot transmittance models, phase/OPD geometry and the polynomial
//! parameterization of the per-pixel instrument response.
//!
//! Wavenumbers are in cm^-1, optical path differences (OPD) in cm, angles in
//! radians. The transmittance of a cavity with surface reflectivity `R` at
//! round-trip phase `phi` is available for three regimes: the 2-wave model,
//! the truncated W-wave model and the infinite-wave limit (the Airy
//! distribution). Mean-scaled variants are normalized so that their average
//! over one full phase period is exactly 1, which decouples fringe shape
//! from the overall optical gain.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Reflectivity ceiling used when clamping optimizer iterates.
pub const REFLECTIVITY_CLAMP_MAX: f64 = 1.0 - 1e-6;

/// Number of emerging waves retained by the cavity transmission model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WaveRegime {
    /// Two emerging waves; identical to `Finite(2)`.
    Two,
    /// A finite number W >= 1 of emerging waves.
    Finite(u32),
    /// Infinitely many waves: the Airy distribution.
    Infinite,
}

impl WaveRegime {
    /// Wave count for finite regimes, `None` for the Airy limit.
    pub fn wave_count(self) -> Option<u32> {
        match self {
            WaveRegime::Two => Some(2),
            WaveRegime::Finite(w) => Some(w),
            WaveRegime::Infinite => None,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            WaveRegime::Finite(0) => Err(Error::InvalidWaveCount),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for WaveRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveRegime::Two => write!(f, "two"),
            WaveRegime::Finite(w) => write!(f, "finite:{w}"),
            WaveRegime::Infinite => write!(f, "infinite"),
        }
    }
}

impl FromStr for WaveRegime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "two" => Ok(WaveRegime::Two),
            "infinite" => Ok(WaveRegime::Infinite),
            _ => {
                let w = s
                    .strip_prefix("finite:")
                    .and_then(|n| n.parse::<u32>().ok())
                    .ok_or_else(|| {
                        format!("invalid regime {s:?}; expected two|finite:W|infinite")
                    })?;
                if w == 0 {
                    return Err("wave count must be at least 1".into());
                }
                Ok(WaveRegime::Finite(w))
            }
        }
    }
}

impl TryFrom<String> for WaveRegime {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<WaveRegime> for String {
    fn from(r: WaveRegime) -> String {
        r.to_string()
    }
}

/// Round-trip phase difference `2*pi*opd*sigma - phase_shift` (unwrapped).
pub fn phase(sigma: f64, opd: f64, phase_shift: f64) -> f64 {
    2.0 * PI * opd * sigma - phase_shift
}

/// OPD between consecutive emerging waves, `2 n d cos(theta)`, for a cavity
/// of thickness `thickness_cm` and inner reflection angle `inner_angle`.
pub fn opd_from_geometry(refractive_index: f64, thickness_cm: f64, inner_angle: f64) -> f64 {
    2.0 * refractive_index * thickness_cm * inner_angle.cos()
}

/// Wrap an angle to [-pi, pi). Values already in range pass through
/// untouched, so wrapping is idempotent.
pub fn wrap_phase(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn check_reflectivity(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) || !r.is_finite() {
        return Err(Error::ReflectivityOutOfRange(r));
    }
    Ok(())
}

/// Cavity transmittance at reflectivity `r` and round-trip phase `phi`.
///
/// The finite-W model is the squared magnitude of the truncated geometric
/// series of emerging waves scaled by the direct transmission (1-R)^2; the
/// infinite limit is the Airy distribution.
pub fn transmittance(r: f64, phi: f64, regime: WaveRegime) -> Result<f64> {
    check_reflectivity(r)?;
    regime.validate()?;
    let t = match regime.wave_count() {
        Some(w) => {
            let rw = r.powi(w as i32);
            let r2w = rw * rw;
            let num = 1.0 + r2w - 2.0 * rw * (w as f64 * phi).cos();
            let den = 1.0 + r * r - 2.0 * r * phi.cos();
            let one_minus = 1.0 - r;
            num / den * one_minus * one_minus
        }
        None => {
            let one_minus = 1.0 - r;
            let s = (0.5 * phi).sin();
            let om2 = one_minus * one_minus;
            om2 / (om2 + 4.0 * r * s * s)
        }
    };
    Ok(t)
}

/// Normalization factor `(1+R) / ((1-R^2W)(1-R))` that makes the phase
/// average of the scaled transmittance equal to one; `(1+R)/(1-R)` in the
/// infinite-wave limit.
pub fn mean_scale_factor(r: f64, regime: WaveRegime) -> Result<f64> {
    check_reflectivity(r)?;
    regime.validate()?;
    let f = match regime.wave_count() {
        Some(w) => {
            let r2w = r.powi(2 * w as i32);
            (1.0 + r) / ((1.0 - r2w) * (1.0 - r))
        }
        None => (1.0 + r) / (1.0 - r),
    };
    Ok(f)
}

/// Transmittance scaled so its average over a full phase period is 1.
pub fn mean_scaled_transmittance(r: f64, phi: f64, regime: WaveRegime) -> Result<f64> {
    Ok(mean_scale_factor(r, regime)? * transmittance(r, phi, regime)?)
}

/// Mean-scaled transmittance together with its partial derivatives with
/// respect to reflectivity and phase, `(value, d/dR, d/dphi)`.
///
/// For finite W the scaled transmittance is `C(R) N(R,phi) / M(R,phi)` with
/// `C = (1-R^2)/(1-R^2W)`, `N = 1 + R^2W - 2 R^W cos(W phi)` and
/// `M = 1 + R^2 - 2 R cos(phi)`; the Airy limit is `(1-R^2)/D` with
/// `D = (1-R)^2 + 4 R sin^2(phi/2)`.
pub fn mean_scaled_with_grads(r: f64, phi: f64, regime: WaveRegime) -> Result<(f64, f64, f64)> {
    check_reflectivity(r)?;
    regime.validate()?;
    match regime.wave_count() {
        Some(w) => {
            let wf = w as f64;
            let rw = r.powi(w as i32);
            let r2w = rw * rw;
            let rw1 = if w >= 1 { r.powi(w as i32 - 1) } else { 0.0 };
            let r2w1 = rw * rw1;
            let (cw, sw) = ((wf * phi).cos(), (wf * phi).sin());
            let (c1, s1) = (phi.cos(), phi.sin());

            let c = (1.0 - r * r) / (1.0 - r2w);
            let n = 1.0 + r2w - 2.0 * rw * cw;
            let m = 1.0 + r * r - 2.0 * r * c1;

            let c_r = (-2.0 * r * (1.0 - r2w) + (1.0 - r * r) * 2.0 * wf * r2w1)
                / ((1.0 - r2w) * (1.0 - r2w));
            let n_r = 2.0 * wf * r2w1 - 2.0 * wf * rw1 * cw;
            let m_r = 2.0 * r - 2.0 * c1;
            let n_phi = 2.0 * wf * rw * sw;
            let m_phi = 2.0 * r * s1;

            let value = c * n / m;
            let d_r = c_r * n / m + c * (n_r * m - n * m_r) / (m * m);
            let d_phi = c * (n_phi * m - n * m_phi) / (m * m);
            Ok((value, d_r, d_phi))
        }
        None => {
            let s = (0.5 * phi).sin();
            let one_minus = 1.0 - r;
            let d = one_minus * one_minus + 4.0 * r * s * s;
            let num = 1.0 - r * r;
            let d_r_num = -2.0 * one_minus + 4.0 * s * s;
            let value = num / d;
            let d_r = (-2.0 * r * d - num * d_r_num) / (d * d);
            let d_phi = -num * (2.0 * r * phi.sin()) / (d * d);
            Ok((value, d_r, d_phi))
        }
    }
}

/// Monochromator central wavenumbers with the derived mean step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavenumberGrid {
    sigma: Vec<f64>,
    sigma_min: f64,
    sigma_max: f64,
    mean_step: f64,
}

impl WavenumberGrid {
    /// Build from an explicit, strictly increasing list of wavenumbers.
    ///
    /// The mean step is `(sigma_max - sigma_min) / N_a`. Single-point grids
    /// are admitted (degenerate acquisitions); estimation operations that
    /// need a positive mean step reject them at their own entry points.
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() || sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidGrid);
        }
        if sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid);
        }
        let sigma_min = sigma[0];
        let sigma_max = *sigma.last().unwrap();
        let mean_step = (sigma_max - sigma_min) / sigma.len() as f64;
        Ok(Self {
            sigma,
            sigma_min,
            sigma_max,
            mean_step,
        })
    }

    /// Regular grid of `n >= 2` points spanning `[min, max]` inclusive.
    pub fn regular(min: f64, max: f64, n: usize) -> Result<Self> {
        if n < 2 || !min.is_finite() || !max.is_finite() || max <= min {
            return Err(Error::InvalidGrid);
        }
        let step = (max - min) / (n - 1) as f64;
        Self::new((0..n).map(|i| min + step * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Mean central-wavenumber step `(sigma_max - sigma_min) / N_a`.
    pub fn mean_step(&self) -> f64 {
        self.mean_step
    }

    /// Affine map of `sigma` onto [-1, 1] over the grid span.
    pub fn normalized(&self, sigma: f64) -> f64 {
        if self.sigma_max > self.sigma_min {
            2.0 * (sigma - self.sigma_min) / (self.sigma_max - self.sigma_min) - 1.0
        } else {
            0.0
        }
    }

    /// Upper OPD bound `1/(2 * mean step)` sampled without aliasing.
    pub fn nyquist_opd(&self) -> f64 {
        if self.mean_step > 0.0 {
            1.0 / (2.0 * self.mean_step)
        } else {
            f64::INFINITY
        }
    }
}

/// Evaluate a polynomial given in the normalized coordinate basis at `sigma`.
///
/// Coefficients are powers of the affinely normalized coordinate
/// `2 (sigma - sigma_min) / (sigma_max - sigma_min) - 1`; this keeps fits of
/// degree ~5 well-conditioned where raw wavenumbers (~10^3..10^4) are not.
pub fn poly_eval(coeffs: &[f64], sigma: f64, grid: &WavenumberGrid) -> f64 {
    poly_eval_normalized(coeffs, grid.normalized(sigma))
}

/// Horner evaluation in the normalized coordinate `x`.
pub fn poly_eval_normalized(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Per-interferometer response parameters: gain polynomial, reflectivity
/// polynomial (both in the normalized coordinate basis of the instrument
/// grid), OPD and phase shift. Total count is `2 (N_d + 1) + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmittanceParams {
    gain_coeffs: Vec<f64>,
    refl_coeffs: Vec<f64>,
    opd_cm: f64,
    phase_shift: f64,
}

impl TransmittanceParams {
    /// Construct and normalize: requires equal coefficient lengths and a
    /// non-negative OPD; the phase shift is wrapped to [-pi, pi).
    pub fn new(
        gain_coeffs: Vec<f64>,
        refl_coeffs: Vec<f64>,
        opd_cm: f64,
        phase_shift: f64,
    ) -> Result<Self> {
        if gain_coeffs.is_empty() || gain_coeffs.len() != refl_coeffs.len() {
            return Err(Error::InvalidParameter(
                "gain and reflectivity polynomials must have the same non-zero length".into(),
            ));
        }
        if gain_coeffs
            .iter()
            .chain(refl_coeffs.iter())
            .any(|c| !c.is_finite())
        {
            return Err(Error::InvalidParameter(
                "polynomial coefficients must be finite".into(),
            ));
        }
        if !opd_cm.is_finite() || opd_cm < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "OPD must be finite and non-negative, got {opd_cm}"
            )));
        }
        if !phase_shift.is_finite() {
            return Err(Error::InvalidParameter("phase shift must be finite".into()));
        }
        Ok(Self {
            gain_coeffs,
            refl_coeffs,
            opd_cm,
            phase_shift: wrap_phase(phase_shift),
        })
    }

    /// Rebuild from the flat layout `[a_0..a_Nd, r_0..r_Nd, opd, phase]`.
    ///
    /// A negative OPD is canonicalized by flipping the signs of both the OPD
    /// and the phase shift, which leaves every cosine-based model unchanged.
    pub fn from_vector(v: &[f64], degree: usize) -> Result<Self> {
        let n = degree + 1;
        if v.len() != 2 * n + 2 {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters for degree {degree}, got {}",
                2 * n + 2,
                v.len()
            )));
        }
        let mut opd = v[2 * n];
        let mut shift = v[2 * n + 1];
        if opd < 0.0 {
            opd = -opd;
            shift = -shift;
        }
        Self::new(v[..n].to_vec(), v[n..2 * n].to_vec(), opd, shift)
    }

    /// Flat layout `[a_0..a_Nd, r_0..r_Nd, opd, phase]`.
    pub fn as_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.gain_coeffs);
        v.extend_from_slice(&self.refl_coeffs);
        v.push(self.opd_cm);
        v.push(self.phase_shift);
        v
    }

    pub fn gain_coeffs(&self) -> &[f64] {
        &self.gain_coeffs
    }

    pub fn refl_coeffs(&self) -> &[f64] {
        &self.refl_coeffs
    }

    pub fn opd_cm(&self) -> f64 {
        self.opd_cm
    }

    pub fn phase_shift(&self) -> f64 {
        self.phase_shift
    }

    pub fn degree(&self) -> usize {
        self.gain_coeffs.len() - 1
    }

    pub fn param_count(&self) -> usize {
        2 * self.gain_coeffs.len() + 2
    }

    /// Replace the OPD, keeping everything else (used for the per-pixel
    /// angular OPD variation).
    pub fn with_opd(&self, opd_cm: f64) -> Result<Self> {
        Self::new(
            self.gain_coeffs.clone(),
            self.refl_coeffs.clone(),
            opd_cm,
            self.phase_shift,
        )
    }

    pub fn gain_at(&self, sigma: f64, grid: &WavenumberGrid) -> f64 {
        poly_eval(&self.gain_coeffs, sigma, grid)
    }

    pub fn reflectivity_at(&self, sigma: f64, grid: &WavenumberGrid) -> f64 {
        poly_eval(&self.refl_coeffs, sigma, grid)
    }

    /// Check the physical constraints on the instrument grid: reflectivity
    /// in [0, 1) and positive gain at every grid wavenumber (unclamped).
    pub fn validate_on_grid(&self, grid: &WavenumberGrid) -> Result<()> {
        for &s in grid.sigma() {
            let r = self.reflectivity_at(s, grid);
            check_reflectivity(r)?;
            let a = self.gain_at(s, grid);
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::NonPositiveGain(s));
            }
        }
        Ok(())
    }

    pub fn is_feasible_on_grid(&self, grid: &WavenumberGrid) -> bool {
        self.validate_on_grid(grid).is_ok()
    }
}

/// Full instrument response `A(sigma) * Tbar(R(sigma), phase(sigma))`.
///
/// The reflectivity polynomial is evaluated unclamped; values outside [0, 1)
/// are rejected. Optimizer residuals use [`transmittance_response_clamped`].
pub fn transmittance_response(
    params: &TransmittanceParams,
    sigma: f64,
    regime: WaveRegime,
    grid: &WavenumberGrid,
) -> Result<f64> {
    let r = params.reflectivity_at(sigma, grid);
    let t = mean_scaled_transmittance(r, phase(sigma, params.opd_cm, params.phase_shift), regime)?;
    Ok(params.gain_at(sigma, grid) * t)
}

/// Total variant of [`transmittance_response`]: the reflectivity polynomial
/// is clamped to `[0, 1 - 1e-6]` before evaluation so intermediate optimizer
/// iterates never leave the model's domain.
pub fn transmittance_response_clamped(
    params: &TransmittanceParams,
    sigma: f64,
    regime: WaveRegime,
    grid: &WavenumberGrid,
) -> Result<f64> {
    let r = params
        .reflectivity_at(sigma, grid)
        .clamp(0.0, REFLECTIVITY_CLAMP_MAX);
    let t = mean_scaled_transmittance(r, phase(sigma, params.opd_cm, params.phase_shift), regime)?;
    Ok(params.gain_at(sigma, grid) * t)
}

/// Largest reflectivity at which the finite-W model stays within
/// `rmse_threshold` of the Airy distribution, both mean-scaled, over a
/// uniform grid of `phase_samples` phases in [0, 2*pi).
///
/// The boundary is located by bisecting a dense reflectivity grid of
/// `1e-4`-spaced points; the divergence grows with R (leading term ~ R^W),
/// so the crossing is unique.
pub fn regime_max_reflectivity(
    regime: WaveRegime,
    rmse_threshold: f64,
    phase_samples: usize,
) -> Result<f64> {
    let w = regime.wave_count().ok_or_else(|| {
        Error::InvalidParameter("regime_max_reflectivity requires a finite regime".into())
    })?;
    if w == 0 {
        return Err(Error::InvalidWaveCount);
    }
    if !(rmse_threshold.is_finite() && rmse_threshold > 0.0) {
        return Err(Error::InvalidThreshold);
    }
    if phase_samples < 2 {
        return Err(Error::InvalidParameter(
            "phase_samples must be at least 2".into(),
        ));
    }

    let phases: Vec<f64> = (0..phase_samples)
        .map(|j| 2.0 * PI * j as f64 / phase_samples as f64)
        .collect();
    let rmse = |r: f64| -> f64 {
        let mut acc = 0.0;
        for &phi in &phases {
            let a = mean_scaled_transmittance(r, phi, WaveRegime::Finite(w)).unwrap();
            let b = mean_scaled_transmittance(r, phi, WaveRegime::Infinite).unwrap();
            acc += (a - b) * (a - b);
        }
        (acc / phase_samples as f64).sqrt()
    };

    const GRID_POINTS: usize = 10_000;
    let step = REFLECTIVITY_CLAMP_MAX / GRID_POINTS as f64;
    let at = |i: usize| i as f64 * step;

    if rmse(at(0)) > rmse_threshold {
        return Err(Error::ThresholdUnattainable);
    }
    if rmse(at(GRID_POINTS)) <= rmse_threshold {
        return Ok(at(GRID_POINTS));
    }
    let (mut lo, mut hi) = (0usize, GRID_POINTS);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if rmse(at(mid)) <= rmse_threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo))
}
