//! Three-step characterization pipeline.
//!
//! Step 1 fits the gain polynomial to the flat-field statistic `w`. Step 2
//! initializes OPD, reflectivity and phase from the fringe-contrast series
//! `v = (u - A(sigma)) / A(sigma)`, either by maximizing the generalized-DFT
//! periodogram (ML) or by an exhaustive grid search (ES). Step 3 refines the
//! full parameter vector against the raw series `y` with the damped
//! least-squares solver. Each pixel is processed independently.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lm::{lm_solve, LeastSquaresProblem, LmConfig, LmReport};
use crate::model::{
    mean_scaled_transmittance, mean_scaled_with_grads, poly_eval_normalized, wrap_phase,
    TransmittanceParams, WaveRegime, WavenumberGrid, REFLECTIVITY_CLAMP_MAX,
};
use crate::report::fit_rmse;
use crate::simulate::{Datacube, DeviceLayout};
use crate::stats::{
    equalize_power, flat_field_statistic, flat_field_statistic_in, neighborhood_mean, raw_series,
    PixelStatistics,
};

/// Step-2 strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Initializer {
    Ml,
    Es,
}

impl FromStr for Initializer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ml" => Ok(Initializer::Ml),
            "es" => Ok(Initializer::Es),
            _ => Err(format!("invalid initializer {s:?}; expected ml|es")),
        }
    }
}

/// Mapping from the fitted fringe amplitude `alpha` to the initial
/// reflectivity estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMode {
    /// Exact inverse of `alpha = 2 r / (1 + r^2)`:
    /// `r = alpha / (1 + sqrt(1 - alpha^2))`.
    Exact,
    /// Legacy mapping `r = 1 - sqrt(1 - alpha^2)`.
    Legacy,
}

impl Default for InversionMode {
    fn default() -> Self {
        InversionMode::Exact
    }
}

/// Exhaustive-search sample grids for step 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsGrids {
    pub opd_cm: Vec<f64>,
    pub reflectivity: Vec<f64>,
    pub phase: Vec<f64>,
}

/// Pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrcaConfig {
    /// Polynomial degree shared by the gain and reflectivity models.
    pub degree: usize,
    pub regime: WaveRegime,
    pub initializer: Initializer,
    /// Periodogram oversampling relative to the base OPD resolution
    /// `1/(2 N_a mean_step)`.
    pub oversampling: usize,
    /// OPD search interval; `None` derives it per pixel (nominal OPD +-10%
    /// when the layout provides one, otherwise the full admissible range
    /// minus a 5-bin guard at each edge).
    pub opd_interval_cm: Option<(f64, f64)>,
    /// Neighborhood-mean kernel size (odd).
    pub kernel: usize,
    /// Flat-field percentile.
    pub percentile: f64,
    /// Take the flat-field statistic per subimage instead of globally.
    pub per_subimage_flat_field: bool,
    /// Freeze the gain polynomial shape from step 1 and fit only its scale.
    pub fixed_gain: bool,
    pub reflectivity_inversion: InversionMode,
    pub gain_lm: LmConfig,
    pub refine_lm: LmConfig,
    /// Explicit ES grids; `None` derives them from the OPD interval.
    pub es_grids: Option<EsGrids>,
}

impl Default for IrcaConfig {
    fn default() -> Self {
        Self {
            degree: 5,
            regime: WaveRegime::Infinite,
            initializer: Initializer::Ml,
            oversampling: 8,
            opd_interval_cm: None,
            kernel: 11,
            percentile: 90.0,
            per_subimage_flat_field: false,
            fixed_gain: false,
            reflectivity_inversion: InversionMode::Exact,
            gain_lm: LmConfig::default(),
            refine_lm: LmConfig::default(),
            es_grids: None,
        }
    }
}

impl IrcaConfig {
    pub fn validate(&self, grid: &WavenumberGrid) -> Result<()> {
        self.regime.validate()?;
        self.gain_lm.validate()?;
        self.refine_lm.validate()?;
        if self.oversampling == 0 {
            return Err(Error::InvalidParameter(
                "oversampling must be at least 1".into(),
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::EvenKernel(self.kernel));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::InvalidPercentile(self.percentile));
        }
        if grid.len() < self.degree + 2 {
            return Err(Error::InvalidParameter(format!(
                "{} acquisitions cannot constrain a degree-{} model",
                grid.len(),
                self.degree
            )));
        }
        if let Some((lo, hi)) = self.opd_interval_cm {
            check_interval((lo, hi), grid)?;
        }
        if let Some(g) = &self.es_grids {
            if g.opd_cm.is_empty() || g.reflectivity.is_empty() || g.phase.is_empty() {
                return Err(Error::EmptyInterval);
            }
            if g.reflectivity
                .iter()
                .any(|&r| !(0.0..1.0).contains(&r) || !r.is_finite())
            {
                return Err(Error::ReflectivityOutOfRange(
                    *g.reflectivity
                        .iter()
                        .find(|&&r| !(0.0..1.0).contains(&r) || !r.is_finite())
                        .unwrap(),
                ));
            }
        }
        Ok(())
    }
}

fn check_interval(interval: (f64, f64), grid: &WavenumberGrid) -> Result<()> {
    let (lo, hi) = interval;
    let nyq = grid.nyquist_opd();
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi <= lo || hi > nyq * (1.0 + 1e-12) {
        return Err(Error::EmptyInterval);
    }
    Ok(())
}

/// Base OPD resolution of the periodogram, `1/(2 N_a mean_step)`.
pub fn base_opd_resolution(grid: &WavenumberGrid) -> f64 {
    grid.nyquist_opd() / grid.len() as f64
}

/// Default OPD search interval: around the nominal OPD when known,
/// otherwise the admissible range with a 5-bin guard at each edge.
pub fn default_opd_interval(grid: &WavenumberGrid, nominal_opd_cm: Option<f64>) -> (f64, f64) {
    let nyq = grid.nyquist_opd();
    match nominal_opd_cm {
        Some(nom) if nom > 0.0 => ((0.9 * nom).max(0.0), (1.1 * nom).min(nyq)),
        _ => {
            let guard = 5.0 * base_opd_resolution(grid);
            if 2.0 * guard < nyq {
                (guard, nyq - guard)
            } else {
                (0.0, nyq)
            }
        }
    }
}

/// Step-1 result: gain polynomial coefficients and the solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFit {
    pub coeffs: Vec<f64>,
    pub report: LmReport,
}

/// Polynomial regression residual in the normalized coordinate basis.
struct PolyProblem<'a> {
    x: &'a [f64],
    data: &'a [f64],
    n_coeffs: usize,
}

impl LeastSquaresProblem for PolyProblem<'_> {
    fn dim(&self) -> usize {
        self.n_coeffs
    }

    fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .x
            .iter()
            .zip(self.data.iter())
            .map(|(&x, &d)| poly_eval_normalized(beta, x) - d)
            .collect())
    }

    fn jacobian(&self, _beta: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let mut jac = DMatrix::zeros(self.x.len(), self.n_coeffs);
        for (i, &x) in self.x.iter().enumerate() {
            let mut p = 1.0;
            for m in 0..self.n_coeffs {
                jac[(i, m)] = p;
                p *= x;
            }
        }
        Some(Ok(jac))
    }
}

/// Fit a degree-`degree` polynomial to the flat-field statistic, starting
/// from a constant at its mean. Non-convergence is reported, with the best
/// iterate returned as coefficients.
pub fn estimate_gain(
    w: &[f64],
    grid: &WavenumberGrid,
    degree: usize,
    lm: &LmConfig,
) -> Result<GainFit> {
    if w.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "flat-field statistic has {} entries for {} wavenumbers",
            w.len(),
            grid.len()
        )));
    }
    if w.len() < degree + 1 {
        return Err(Error::InvalidParameter(format!(
            "{} samples cannot determine {} polynomial coefficients",
            w.len(),
            degree + 1
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    let x: Vec<f64> = grid.sigma().iter().map(|&s| grid.normalized(s)).collect();
    let problem = PolyProblem {
        x: &x,
        data: w,
        n_coeffs: degree + 1,
    };
    let mut beta0 = vec![0.0; degree + 1];
    beta0[0] = w.iter().sum::<f64>() / w.len() as f64;
    let report = lm_solve(&problem, &beta0, lm)?;
    Ok(GainFit {
        coeffs: report.params.clone(),
        report,
    })
}

/// Relative fringe signal `v_i = (u_i - A(sigma_i)) / A(sigma_i)`.
pub fn fringe_contrast_series(
    u: &[f64],
    gain_coeffs: &[f64],
    grid: &WavenumberGrid,
) -> Result<Vec<f64>> {
    if u.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "neighborhood series has {} entries for {} wavenumbers",
            u.len(),
            grid.len()
        )));
    }
    u.iter()
        .zip(grid.sigma().iter())
        .map(|(&ui, &s)| {
            let a = poly_eval_normalized(gain_coeffs, grid.normalized(s));
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::NonPositiveGain(s));
            }
            Ok((ui - a) / a)
        })
        .collect()
}

/// Cosine/sine projections of `v` at trial OPD `opd`:
/// `(sum v cos(2 pi opd sigma), sum v sin(2 pi opd sigma))`.
fn fourier_sums(v: &[f64], grid: &WavenumberGrid, opd: f64) -> (f64, f64) {
    let mut c = 0.0;
    let mut s = 0.0;
    for (&vi, &sigma) in v.iter().zip(grid.sigma().iter()) {
        let (sin, cos) = (2.0 * PI * opd * sigma).sin_cos();
        c += vi * cos;
        s += vi * sin;
    }
    (c, s)
}

/// Periodogram magnitude `|sum_i v_i exp(-j 2 pi opd sigma_i)|`, evaluated
/// as an explicit generalized-DFT sum so irregular grids are exact.
pub fn periodogram_power(v: &[f64], grid: &WavenumberGrid, opd: f64) -> f64 {
    let (c, s) = fourier_sums(v, grid, opd);
    (c * c + s * s).sqrt()
}

/// Arg-max of the periodogram over an OPD interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpdEstimate {
    pub opd_cm: f64,
    pub power: f64,
    /// Set when the maximum is not unique (ties resolve to the lowest OPD)
    /// or the spectrum is identically zero.
    pub degenerate: bool,
}

/// Maximize the periodogram of `v` on a sample grid of step
/// `base_resolution / oversampling` covering `interval`.
pub fn periodogram_opd(
    v: &[f64],
    grid: &WavenumberGrid,
    interval: (f64, f64),
    oversampling: usize,
) -> Result<OpdEstimate> {
    if v.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "series has {} entries for {} wavenumbers",
            v.len(),
            grid.len()
        )));
    }
    if grid.len() < 2 {
        return Err(Error::InvalidGrid);
    }
    if oversampling == 0 {
        return Err(Error::InvalidParameter(
            "oversampling must be at least 1".into(),
        ));
    }
    check_interval(interval, grid)?;
    let (lo, hi) = interval;
    let step = base_opd_resolution(grid) / oversampling as f64;
    let n_steps = ((hi - lo) / step).floor() as usize;
    let mut best = OpdEstimate {
        opd_cm: lo,
        power: f64::NEG_INFINITY,
        degenerate: false,
    };
    let mut ties = 0usize;
    for j in 0..=n_steps {
        let opd = lo + j as f64 * step;
        let p = periodogram_power(v, grid, opd);
        if p > best.power {
            best = OpdEstimate {
                opd_cm: opd,
                power: p,
                degenerate: false,
            };
            ties = 0;
        } else if p == best.power {
            ties += 1;
        }
    }
    best.degenerate = ties > 0 || best.power <= 0.0;
    Ok(best)
}

/// Fringe amplitude estimate `(2/N_a) |sum v_i exp(-j 2 pi opd sigma_i)|`.
pub fn ml_amplitude(v: &[f64], grid: &WavenumberGrid, opd: f64) -> f64 {
    2.0 / v.len() as f64 * periodogram_power(v, grid, opd)
}

/// Reflectivity from the fringe amplitude.
///
/// `Exact` inverts `alpha = 2 r / (1 + r^2)` using the stable form
/// `r = alpha / (1 + sqrt(1 - alpha^2))`; `Legacy` applies
/// `1 - sqrt(1 - alpha^2)`. Amplitudes above 1 by more than 1e-6 are
/// rejected as inconsistent; smaller excursions are clamped.
pub fn ml_reflectivity(alpha: f64, mode: InversionMode) -> Result<f64> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InconsistentAmplitude(alpha));
    }
    if alpha > 1.0 + 1e-6 {
        return Err(Error::InconsistentAmplitude(alpha));
    }
    let a = alpha.min(1.0);
    let root = (1.0 - a * a).sqrt();
    Ok(match mode {
        InversionMode::Exact => a / (1.0 + root),
        InversionMode::Legacy => 1.0 - root,
    })
}

/// Four-quadrant phase estimate in [-pi, pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub phase_shift: f64,
    /// Both projections vanished; the phase is undefined and reported as 0.
    pub degenerate: bool,
}

pub fn ml_phase(v: &[f64], grid: &WavenumberGrid, opd: f64) -> PhaseEstimate {
    let (c, s) = fourier_sums(v, grid, opd);
    if c == 0.0 && s == 0.0 {
        return PhaseEstimate {
            phase_shift: 0.0,
            degenerate: true,
        };
    }
    PhaseEstimate {
        phase_shift: wrap_phase(s.atan2(c)),
        degenerate: false,
    }
}

/// Default ES grids: OPD at the base periodogram resolution over the
/// interval, reflectivity 0.05..0.95 in steps of 0.05, 16 phases.
pub fn default_es_grids(interval: (f64, f64), grid: &WavenumberGrid) -> EsGrids {
    let (lo, hi) = interval;
    let step = base_opd_resolution(grid);
    let n = ((hi - lo) / step).floor() as usize;
    EsGrids {
        opd_cm: (0..=n).map(|j| lo + j as f64 * step).collect(),
        reflectivity: (1..=19).map(|i| i as f64 * 0.05).collect(),
        phase: (0..16).map(|i| -PI + 2.0 * PI * i as f64 / 16.0).collect(),
    }
}

/// Exhaustive minimization of
/// `sum_i (Tbar(r, 2 pi opd sigma_i - phi) - 1 - v_i)^2`
/// over the Cartesian product of the sample grids. Ties break
/// lexicographically: lowest OPD, then reflectivity, then phase.
pub fn es_initialize(
    v: &[f64],
    grid: &WavenumberGrid,
    grids: &EsGrids,
    regime: WaveRegime,
) -> Result<(f64, f64, f64)> {
    if v.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "series has {} entries for {} wavenumbers",
            v.len(),
            grid.len()
        )));
    }
    if grids.opd_cm.is_empty() || grids.reflectivity.is_empty() || grids.phase.is_empty() {
        return Err(Error::EmptyInterval);
    }
    regime.validate()?;
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for &opd in &grids.opd_cm {
        for &r in &grids.reflectivity {
            for &phi0 in &grids.phase {
                let mut cost = 0.0;
                for (&vi, &s) in v.iter().zip(grid.sigma().iter()) {
                    let t = mean_scaled_transmittance(r, 2.0 * PI * opd * s - phi0, regime)?;
                    let e = t - 1.0 - vi;
                    cost += e * e;
                }
                if cost < best.0 {
                    best = (cost, opd, r, phi0);
                }
            }
        }
    }
    Ok((best.1, best.2, best.3))
}

/// Residual of the full transmittance-response model against a raw series.
///
/// Parameter layout: `[a_0..a_Nd, r_0..r_Nd, opd, phase]`, or
/// `[scale, r_0..r_Nd, opd, phase]` in fixed-gain mode where the gain is
/// `scale * A0(sigma)`. The OPD parameter is carried in units of the base
/// periodogram resolution so every Jacobian column is comparably scaled.
/// The reflectivity polynomial is clamped to `[0, 1-1e-6]` and its
/// derivative zeroed where the clamp is active.
pub struct ResponseProblem<'a> {
    y: &'a [f64],
    sigma: &'a [f64],
    x: Vec<f64>,
    regime: WaveRegime,
    n_coeffs: usize,
    opd_scale: f64,
    gain_base: Option<&'a [f64]>,
}

impl<'a> ResponseProblem<'a> {
    /// `gain_base` switches on fixed-gain mode with that polynomial shape.
    pub fn new(
        y: &'a [f64],
        grid: &'a WavenumberGrid,
        regime: WaveRegime,
        n_coeffs: usize,
        gain_base: Option<&'a [f64]>,
    ) -> Self {
        Self {
            y,
            sigma: grid.sigma(),
            x: grid.sigma().iter().map(|&s| grid.normalized(s)).collect(),
            regime,
            n_coeffs,
            opd_scale: base_opd_resolution(grid),
            gain_base,
        }
    }

    fn n_gain_params(&self) -> usize {
        if self.gain_base.is_some() {
            1
        } else {
            self.n_coeffs
        }
    }

    fn split<'b>(&self, beta: &'b [f64]) -> (&'b [f64], &'b [f64], f64, f64) {
        let ng = self.n_gain_params();
        (
            &beta[..ng],
            &beta[ng..ng + self.n_coeffs],
            beta[ng + self.n_coeffs],
            beta[ng + self.n_coeffs + 1],
        )
    }

    fn gain_at(&self, gain: &[f64], i: usize) -> f64 {
        match self.gain_base {
            Some(base) => gain[0] * poly_eval_normalized(base, self.x[i]),
            None => poly_eval_normalized(gain, self.x[i]),
        }
    }
}

impl LeastSquaresProblem for ResponseProblem<'_> {
    fn dim(&self) -> usize {
        self.n_gain_params() + self.n_coeffs + 2
    }

    fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let (gain, refl, opd_scaled, shift) = self.split(beta);
        let opd = opd_scaled * self.opd_scale;
        (0..self.sigma.len())
            .map(|i| {
                let a = self.gain_at(gain, i);
                let r = poly_eval_normalized(refl, self.x[i]).clamp(0.0, REFLECTIVITY_CLAMP_MAX);
                let phi = 2.0 * PI * opd * self.sigma[i] - shift;
                let t = mean_scaled_transmittance(r, phi, self.regime)?;
                Ok(a * t - self.y[i])
            })
            .collect()
    }

    fn jacobian(&self, beta: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let (gain, refl, opd_scaled, shift) = self.split(beta);
        let opd = opd_scaled * self.opd_scale;
        let ng = self.n_gain_params();
        let mut jac = DMatrix::zeros(self.sigma.len(), self.dim());
        for i in 0..self.sigma.len() {
            let x = self.x[i];
            let a = self.gain_at(gain, i);
            let r_raw = poly_eval_normalized(refl, x);
            let r = r_raw.clamp(0.0, REFLECTIVITY_CLAMP_MAX);
            let clamped = r_raw != r;
            let phi = 2.0 * PI * opd * self.sigma[i] - shift;
            let (t, dt_dr, dt_dphi) = match mean_scaled_with_grads(r, phi, self.regime) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            match self.gain_base {
                Some(base) => jac[(i, 0)] = poly_eval_normalized(base, x) * t,
                None => {
                    let mut p = 1.0;
                    for m in 0..self.n_coeffs {
                        jac[(i, m)] = p * t;
                        p *= x;
                    }
                }
            }
            let dr = if clamped { 0.0 } else { a * dt_dr };
            let mut p = 1.0;
            for m in 0..self.n_coeffs {
                jac[(i, ng + m)] = p * dr;
                p *= x;
            }
            jac[(i, ng + self.n_coeffs)] =
                a * dt_dphi * 2.0 * PI * self.sigma[i] * self.opd_scale;
            jac[(i, ng + self.n_coeffs + 1)] = -a * dt_dphi;
        }
        Some(Ok(jac))
    }
}

/// Step-3 outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub params: TransmittanceParams,
    pub report: LmReport,
}

/// Refine all response parameters against the raw series `y`, starting from
/// `init`. In fixed-gain mode the gain polynomial shape is frozen at its
/// initialization and only a global scale is fitted alongside the
/// reflectivity polynomial, OPD and phase.
pub fn refine(
    y: &[f64],
    grid: &WavenumberGrid,
    init: &TransmittanceParams,
    regime: WaveRegime,
    lm: &LmConfig,
    fixed_gain: bool,
) -> Result<RefineOutcome> {
    if y.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "series has {} entries for {} wavenumbers",
            y.len(),
            grid.len()
        )));
    }
    if grid.len() < 2 {
        return Err(Error::InvalidGrid);
    }
    regime.validate()?;
    let n_coeffs = init.gain_coeffs().len();
    let gain_base = fixed_gain.then(|| init.gain_coeffs().to_vec());
    let problem = ResponseProblem::new(y, grid, regime, n_coeffs, gain_base.as_deref());
    let opd_scale = problem.opd_scale;

    let mut beta0 = Vec::with_capacity(problem.dim());
    if fixed_gain {
        beta0.push(1.0);
    } else {
        beta0.extend_from_slice(init.gain_coeffs());
    }
    beta0.extend_from_slice(init.refl_coeffs());
    beta0.push(init.opd_cm() / opd_scale);
    beta0.push(init.phase_shift());

    let report = lm_solve(&problem, &beta0, lm)?;

    let ng = if fixed_gain { 1 } else { n_coeffs };
    let gain: Vec<f64> = match &gain_base {
        Some(base) => base.iter().map(|c| c * report.params[0]).collect(),
        None => report.params[..n_coeffs].to_vec(),
    };
    let mut flat = gain;
    flat.extend_from_slice(&report.params[ng..ng + n_coeffs]);
    flat.push(report.params[ng + n_coeffs] * opd_scale);
    flat.push(report.params[ng + n_coeffs + 1]);
    let params = TransmittanceParams::from_vector(&flat, n_coeffs - 1)?;
    Ok(RefineOutcome { params, report })
}

/// Model curve of `params` on the grid, evaluated with the same clamped
/// response the refinement optimized.
pub fn model_curve(
    params: &TransmittanceParams,
    grid: &WavenumberGrid,
    regime: WaveRegime,
) -> Result<Vec<f64>> {
    grid.sigma()
        .iter()
        .map(|&s| crate::model::transmittance_response_clamped(params, s, regime, grid))
        .collect()
}

/// Step-2 intermediate estimates recorded alongside the final fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialEstimates {
    pub gain_coeffs: Vec<f64>,
    pub gain_converged: bool,
    pub opd_cm: f64,
    /// Fringe amplitude (ML initializer only).
    pub amplitude: Option<f64>,
    pub reflectivity: f64,
    pub phase_shift: f64,
    /// Degenerate periodogram or phase projection encountered.
    pub degenerate: bool,
}

/// Full per-pixel characterization outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationResult {
    pub pixel: (usize, usize),
    pub interferometer: Option<usize>,
    pub params: TransmittanceParams,
    /// Relative RMSE between the fitted curve and the raw series.
    pub rmse: f64,
    pub converged: bool,
    /// Final parameters satisfy the physical bounds on the grid (unclamped).
    pub feasible: bool,
    pub init: InitialEstimates,
    pub refine: LmReport,
}

/// Run the three steps on one pixel's statistics with an explicit OPD
/// search interval.
pub fn characterize_pixel(
    stats: &PixelStatistics,
    grid: &WavenumberGrid,
    config: &IrcaConfig,
    opd_interval_cm: (f64, f64),
) -> Result<CharacterizationResult> {
    if stats.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "statistics have {} entries for {} wavenumbers",
            stats.len(),
            grid.len()
        )));
    }
    let gain = estimate_gain(&stats.flat_field, grid, config.degree, &config.gain_lm)?;
    let v = fringe_contrast_series(&stats.neighborhood, &gain.coeffs, grid)?;

    let init = match config.initializer {
        Initializer::Ml => {
            let opd = periodogram_opd(&v, grid, opd_interval_cm, config.oversampling)?;
            let alpha = ml_amplitude(&v, grid, opd.opd_cm);
            let reflectivity = ml_reflectivity(alpha, config.reflectivity_inversion)?;
            let phase = ml_phase(&v, grid, opd.opd_cm);
            InitialEstimates {
                gain_coeffs: gain.coeffs.clone(),
                gain_converged: gain.report.converged,
                opd_cm: opd.opd_cm,
                amplitude: Some(alpha),
                reflectivity,
                phase_shift: phase.phase_shift,
                degenerate: opd.degenerate || phase.degenerate,
            }
        }
        Initializer::Es => {
            let grids = match &config.es_grids {
                Some(g) => g.clone(),
                None => default_es_grids(opd_interval_cm, grid),
            };
            let (opd, reflectivity, phase_shift) =
                es_initialize(&v, grid, &grids, config.regime)?;
            InitialEstimates {
                gain_coeffs: gain.coeffs.clone(),
                gain_converged: gain.report.converged,
                opd_cm: opd,
                amplitude: None,
                reflectivity,
                phase_shift,
                degenerate: false,
            }
        }
    };

    let mut refl0 = vec![0.0; config.degree + 1];
    refl0[0] = init.reflectivity;
    let beta0 = TransmittanceParams::new(
        init.gain_coeffs.clone(),
        refl0,
        init.opd_cm,
        init.phase_shift,
    )?;
    let refined = refine(
        &stats.raw,
        grid,
        &beta0,
        config.regime,
        &config.refine_lm,
        config.fixed_gain,
    )?;

    let curve = model_curve(&refined.params, grid, config.regime)?;
    let y_mean = stats.raw.iter().sum::<f64>() / stats.raw.len() as f64;
    let rmse = fit_rmse(&stats.raw, &curve, y_mean)?;
    let feasible = refined.params.is_feasible_on_grid(grid);
    Ok(CharacterizationResult {
        pixel: stats.pixel,
        interferometer: stats.interferometer,
        converged: refined.report.converged,
        feasible,
        params: refined.params,
        rmse,
        init,
        refine: refined.report,
    })
}

/// Which pixels of a device to characterize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSelector {
    /// The optical-axis pixel of every subimage.
    Central,
    /// Every pixel covered by a subimage.
    FullPlane,
    /// An explicit pixel list.
    Pixels(Vec<(usize, usize)>),
}

/// A pixel whose characterization failed outright (as opposed to a fit that
/// ran but did not converge).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelFailure {
    pub pixel: (usize, usize),
    pub interferometer: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCharacterization {
    /// Successful runs, sorted by interferometer then pixel.
    pub results: Vec<CharacterizationResult>,
    pub failures: Vec<PixelFailure>,
}

/// Characterize a set of pixels of a datacube independently.
///
/// The cube is power-equalized first; the flat-field statistic is computed
/// once (globally, or per subimage on demand). Pixels run in parallel, and
/// per-pixel errors are recorded as failures rather than aborting the run.
pub fn characterize_device(
    cube: &Datacube,
    layout: &DeviceLayout,
    config: &IrcaConfig,
    selector: &PixelSelector,
) -> Result<DeviceCharacterization> {
    if cube.height() != layout.focal_height() || cube.width() != layout.focal_width() {
        return Err(Error::ShapeMismatch(format!(
            "cube is {}x{} but layout expects {}x{}",
            cube.height(),
            cube.width(),
            layout.focal_height(),
            layout.focal_width()
        )));
    }
    config.validate(cube.grid())?;
    let cube = equalize_power(cube)?;
    let grid = cube.grid().clone();

    let pixels: Vec<(Option<usize>, (usize, usize))> = match selector {
        PixelSelector::Central => (0..layout.n_interferometers())
            .map(|k| (Some(k), layout.central_pixel(k)))
            .collect(),
        PixelSelector::FullPlane => {
            let mut list = Vec::new();
            for k in 0..layout.n_interferometers() {
                let rect = layout.subimage_rect(k);
                for row in rect.row0..rect.row0 + rect.height {
                    for col in rect.col0..rect.col0 + rect.width {
                        list.push((Some(k), (row, col)));
                    }
                }
            }
            list
        }
        PixelSelector::Pixels(list) => list
            .iter()
            .map(|&(row, col)| (layout.interferometer_at(row, col), (row, col)))
            .collect(),
    };

    // Flat-field statistics shared across pixels.
    let global_w = if config.per_subimage_flat_field {
        None
    } else {
        Some(flat_field_statistic(&cube, config.percentile)?)
    };
    let per_subimage_w: Vec<Option<Vec<f64>>> = if config.per_subimage_flat_field {
        let mut needed = vec![false; layout.n_interferometers()];
        for (k, _) in &pixels {
            if let Some(k) = k {
                needed[*k] = true;
            }
        }
        needed
            .iter()
            .enumerate()
            .map(|(k, &need)| {
                if need {
                    flat_field_statistic_in(&cube, config.percentile, layout.subimage_rect(k))
                        .map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let outcomes: Vec<std::result::Result<CharacterizationResult, PixelFailure>> = pixels
        .par_iter()
        .map(|&(k, pixel)| {
            let run = || -> Result<CharacterizationResult> {
                let raw = raw_series(&cube, pixel)?;
                let bounds = k.map(|k| layout.subimage_rect(k));
                let u = neighborhood_mean(&cube, pixel, config.kernel, bounds)?;
                let w = match (&global_w, k) {
                    (Some(w), _) => w.clone(),
                    (None, Some(k)) => per_subimage_w[k]
                        .clone()
                        .expect("per-subimage statistic precomputed"),
                    (None, None) => flat_field_statistic(&cube, config.percentile)?,
                };
                let stats = PixelStatistics::new(raw, u, w, pixel, k)?;
                let interval = match config.opd_interval_cm {
                    Some(iv) => iv,
                    None => default_opd_interval(&grid, k.map(|k| layout.nominal_opd_cm(k))),
                };
                check_interval(interval, &grid)?;
                characterize_pixel(&stats, &grid, config, interval)
            };
            run().map_err(|e| PixelFailure {
                pixel,
                interferometer: k,
                message: e.to_string(),
            })
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    results.sort_by(|a, b| {
        let ka = a.interferometer.map_or(usize::MAX, |k| k);
        let kb = b.interferometer.map_or(usize::MAX, |k| k);
        (ka, a.pixel).cmp(&(kb, b.pixel))
    });
    Ok(DeviceCharacterization { results, failures })
}
