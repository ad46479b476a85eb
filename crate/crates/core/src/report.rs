//! Quantitative evaluation of characterization runs: relative-RMSE
//! aggregates, OPD staircase-step deviations and per-pixel parameter maps,
//! all as serializable data with plot-ready CSV renderings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::CharacterizationResult;
use crate::model::WavenumberGrid;
use crate::simulate::DeviceLayout;

/// Relative RMSE between a fitted curve and the measured series:
/// `sqrt(mean(((t_i - y_i) / y_mean)^2))`.
pub fn fit_rmse(y: &[f64], fitted: &[f64], y_mean: f64) -> Result<f64> {
    if y.len() != fitted.len() || y.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "series lengths differ: {} vs {}",
            y.len(),
            fitted.len()
        )));
    }
    if y_mean == 0.0 || !y_mean.is_finite() {
        return Err(Error::ZeroMeanSignal);
    }
    let acc: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(&yi, &ti)| {
            let e = (ti - yi) / y_mean;
            e * e
        })
        .sum();
    Ok((acc / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferometerRmse {
    pub interferometer: Option<usize>,
    pub pixel: (usize, usize),
    pub rmse: f64,
    pub converged: bool,
}

/// RMSE table over a result set. Aggregates cover converged fits only; the
/// excluded count is reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub regime: String,
    pub entries: Vec<InterferometerRmse>,
    pub mean_rmse: f64,
    /// Sample standard deviation over converged fits (0 for fewer than two).
    pub std_rmse: f64,
    pub converged_count: usize,
    pub non_converged_count: usize,
}

pub fn fit_report(results: &[CharacterizationResult], method: &str, regime: &str) -> FitReport {
    let entries: Vec<InterferometerRmse> = results
        .iter()
        .map(|r| InterferometerRmse {
            interferometer: r.interferometer,
            pixel: r.pixel,
            rmse: r.rmse,
            converged: r.converged,
        })
        .collect();
    let converged: Vec<f64> = results
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.rmse)
        .collect();
    let n = converged.len();
    let mean = if n > 0 {
        converged.iter().sum::<f64>() / n as f64
    } else {
        f64::NAN
    };
    let std = if n > 1 {
        (converged.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    FitReport {
        method: method.to_string(),
        regime: regime.to_string(),
        entries,
        mean_rmse: mean,
        std_rmse: std,
        converged_count: n,
        non_converged_count: results.len() - n,
    }
}

impl FitReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interferometer,row,col,rmse,converged\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.interferometer.map_or(String::from(""), |k| k.to_string()),
                e.pixel.0,
                e.pixel.1,
                e.rmse,
                e.converged
            ));
        }
        out
    }

    /// One-line summary: `mean +- std (n converged, m excluded)`.
    pub fn summary_line(&self) -> String {
        format!(
            "{} {} rmse {:.6} +- {:.6} ({} converged, {} excluded)",
            self.method,
            self.regime,
            self.mean_rmse,
            self.std_rmse,
            self.converged_count,
            self.non_converged_count
        )
    }
}

/// Staircase analysis: per-interferometer OPD, the increment between
/// successive interferometers and its deviation from the nominal step.
/// Missing interferometers leave `None` gaps and are listed explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpdStepReport {
    /// Estimated OPD per interferometer index, length `N_i`.
    pub opd_cm: Vec<Option<f64>>,
    /// `opd[k+1] - opd[k]`, length `N_i - 1`.
    pub step_cm: Vec<Option<f64>>,
    /// `step - nominal_step`, length `N_i - 1`.
    pub deviation_cm: Vec<Option<f64>>,
    /// Nominal OPD increment `2 n delta_d`.
    pub nominal_step_cm: f64,
    /// Subimage-grid slot (row, col) per interferometer.
    pub slots: Vec<(usize, usize)>,
    pub missing: Vec<usize>,
}

/// Build the staircase report from central-pixel results (the first result
/// per interferometer is used when several pixels were characterized).
pub fn opd_step_report(
    results: &[CharacterizationResult],
    layout: &DeviceLayout,
) -> Result<OpdStepReport> {
    let n = layout.n_interferometers();
    if n == 0 {
        return Err(Error::InvalidParameter("layout has no interferometers".into()));
    }
    let mut opd: Vec<Option<f64>> = vec![None; n];
    for r in results {
        if let Some(k) = r.interferometer {
            if k < n && opd[k].is_none() && r.converged {
                opd[k] = Some(r.params.opd_cm());
            }
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&k| opd[k].is_none()).collect();
    let step: Vec<Option<f64>> = (0..n.saturating_sub(1))
        .map(|k| match (opd[k], opd[k + 1]) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        })
        .collect();
    let nominal = layout.nominal_opd_step_cm();
    let deviation = step.iter().map(|s| s.map(|s| s - nominal)).collect();
    Ok(OpdStepReport {
        opd_cm: opd,
        step_cm: step,
        deviation_cm: deviation,
        nominal_step_cm: nominal,
        slots: (0..n).map(|k| layout.slot(k)).collect(),
        missing,
    })
}

impl OpdStepReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("interferometer,slot_row,slot_col,opd_cm,step_cm,deviation_cm\n");
        for k in 0..self.opd_cm.len() {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
            let (sr, sc) = self.slots[k];
            let (step, dev) = if k + 1 < self.opd_cm.len() {
                (fmt(self.step_cm[k]), fmt(self.deviation_cm[k]))
            } else {
                (String::new(), String::new())
            };
            out.push_str(&format!(
                "{k},{sr},{sc},{},{step},{dev}\n",
                fmt(self.opd_cm[k])
            ));
        }
        out
    }
}

/// Per-pixel maps over the focal plane: relative OPD increase with respect
/// to the subimage center and grid-averaged reflectivity. `None` marks
/// pixels that were not characterized or did not converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMaps {
    pub height: usize,
    pub width: usize,
    /// `(opd(p) - opd(center)) / opd(center)` per mapped pixel.
    pub relative_opd: Vec<Option<f64>>,
    /// Reflectivity polynomial averaged over the instrument grid.
    pub mean_reflectivity: Vec<Option<f64>>,
    /// Non-converged pixels masked out of the maps.
    pub masked_count: usize,
    /// Subimages skipped because their center pixel was missing or did not
    /// converge.
    pub skipped_subimages: Vec<usize>,
}

/// Build the maps from full-plane results.
pub fn parameter_maps(
    results: &[CharacterizationResult],
    layout: &DeviceLayout,
    grid: &WavenumberGrid,
) -> Result<ParameterMaps> {
    let (h, w) = (layout.focal_height(), layout.focal_width());
    let mut relative_opd = vec![None; h * w];
    let mut mean_reflectivity = vec![None; h * w];
    let mut masked = 0usize;
    let mut skipped = Vec::new();

    // center OPD per subimage
    let mut center_opd: Vec<Option<f64>> = vec![None; layout.n_interferometers()];
    for r in results {
        if let Some(k) = r.interferometer {
            if r.pixel == layout.central_pixel(k) && r.converged {
                center_opd[k] = Some(r.params.opd_cm());
            }
        }
    }
    for (k, c) in center_opd.iter().enumerate() {
        if c.is_none() && results.iter().any(|r| r.interferometer == Some(k)) {
            skipped.push(k);
        }
    }

    for r in results {
        let Some(k) = r.interferometer else { continue };
        let Some(center) = center_opd[k] else { continue };
        let idx = r.pixel.0 * w + r.pixel.1;
        if !r.converged {
            masked += 1;
            continue;
        }
        relative_opd[idx] = Some((r.params.opd_cm() - center) / center);
        let mean_r = grid
            .sigma()
            .iter()
            .map(|&s| r.params.reflectivity_at(s, grid))
            .sum::<f64>()
            / grid.len() as f64;
        mean_reflectivity[idx] = Some(mean_r);
    }

    Ok(ParameterMaps {
        height: h,
        width: w,
        relative_opd,
        mean_reflectivity,
        masked_count: masked,
        skipped_subimages: skipped,
    })
}

impl ParameterMaps {
    /// CSV rendering of one map: `row,col,value` for mapped pixels.
    pub fn map_to_csv(&self, map: &[Option<f64>]) -> String {
        let mut out = String::from("row,col,value\n");
        for row in 0..self.height {
            for col in 0..self.width {
                if let Some(v) = map[row * self.width + col] {
                    out.push_str(&format!("{row},{col},{v}\n"));
                }
            }
        }
        out
    }

    /// Mean relative OPD per integer radius bin around `center`, for pixels
    /// of one subimage. Bins without samples are omitted.
    pub fn radial_profile(&self, center: (f64, f64)) -> Vec<(usize, f64, usize)> {
        let mut acc: Vec<(f64, usize)> = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if let Some(v) = self.relative_opd[row * self.width + col] {
                    let dr = row as f64 - center.0;
                    let dc = col as f64 - center.1;
                    let bin = (dr * dr + dc * dc).sqrt().floor() as usize;
                    if acc.len() <= bin {
                        acc.resize(bin + 1, (0.0, 0));
                    }
                    acc[bin].0 += v;
                    acc[bin].1 += 1;
                }
            }
        }
        acc.into_iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(bin, (sum, n))| (bin, sum / n as f64, n))
            .collect()
    }
}
