//! On-disk formats.
//!
//! A datacube is a `manifest.json` next to a raw payload of little-endian
//! f64 samples ordered acquisition-major then row-major. Ground truth,
//! layout and characterization results are plain JSON documents. The
//! manifest schema is versioned and unknown versions are rejected.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimate::{CharacterizationResult, Initializer, PixelFailure};
use crate::model::{TransmittanceParams, WaveRegime, WavenumberGrid};
use crate::simulate::{Datacube, LayoutConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const PAYLOAD_NAME: &str = "frames.bin";
pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_acq: usize,
    pub height: usize,
    pub width: usize,
    pub wavenumbers_cm1: Vec<f64>,
    pub incident_power: Vec<f64>,
    pub dtype: String,
    pub payload: String,
}

/// Resolve a user path to the manifest file: a directory means
/// `dir/manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let manifest_file = manifest_path(path);
    let reader = BufReader::new(File::open(&manifest_file)?);
    let manifest: Manifest = serde_json::from_reader(reader)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormatVersion(manifest.format_version));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::UnsupportedDtype(manifest.dtype.clone()));
    }
    let dir = manifest_file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok((manifest, dir))
}

/// Read a datacube from a directory or an explicit manifest path.
pub fn read_datacube(path: &Path) -> Result<Datacube> {
    let (manifest, dir) = read_manifest(path)?;
    if manifest.wavenumbers_cm1.len() != manifest.n_acq {
        return Err(Error::ShapeMismatch(format!(
            "manifest lists {} wavenumbers for {} acquisitions",
            manifest.wavenumbers_cm1.len(),
            manifest.n_acq
        )));
    }
    let expected = manifest.n_acq * manifest.height * manifest.width;
    let payload = dir.join(&manifest.payload);
    let meta = std::fs::metadata(&payload)?;
    if meta.len() != (expected * 8) as u64 {
        return Err(Error::ShapeMismatch(format!(
            "payload holds {} bytes, manifest implies {}",
            meta.len(),
            expected * 8
        )));
    }
    let mut reader = BufReader::new(File::open(&payload)?);
    let mut frames = vec![0.0f64; expected];
    let mut buf = [0u8; 8];
    for v in frames.iter_mut() {
        reader.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    let grid = WavenumberGrid::new(manifest.wavenumbers_cm1)?;
    Datacube::new(
        grid,
        manifest.height,
        manifest.width,
        frames,
        manifest.incident_power,
    )
}

/// Write a complete in-memory datacube.
pub fn write_datacube(dir: &Path, cube: &Datacube) -> Result<()> {
    let mut writer = DatacubeWriter::create(
        dir,
        cube.grid(),
        cube.height(),
        cube.width(),
        cube.incident_power().to_vec(),
    )?;
    for i in 0..cube.n_acq() {
        writer.append_frame(cube.frame(i))?;
    }
    writer.finish()
}

/// Incremental writer so large cubes never need to be materialized in
/// memory: the manifest is written up front, frames are appended in order.
pub struct DatacubeWriter {
    payload: BufWriter<File>,
    frame_len: usize,
    frames_left: usize,
}

impl DatacubeWriter {
    pub fn create(
        dir: &Path,
        grid: &WavenumberGrid,
        height: usize,
        width: usize,
        incident_power: Vec<f64>,
    ) -> Result<Self> {
        if incident_power.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} power entries for {} acquisitions",
                incident_power.len(),
                grid.len()
            )));
        }
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            n_acq: grid.len(),
            height,
            width,
            wavenumbers_cm1: grid.sigma().to_vec(),
            incident_power,
            dtype: DTYPE.to_string(),
            payload: PAYLOAD_NAME.to_string(),
        };
        write_json(&dir.join(MANIFEST_NAME), &manifest)?;
        let payload = BufWriter::new(File::create(dir.join(PAYLOAD_NAME))?);
        Ok(Self {
            payload,
            frame_len: height * width,
            frames_left: grid.len(),
        })
    }

    pub fn append_frame(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.frame_len {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.frame_len
            )));
        }
        if self.frames_left == 0 {
            return Err(Error::ShapeMismatch("more frames than declared".into()));
        }
        for v in frame {
            self.payload.write_all(&v.to_le_bytes())?;
        }
        self.frames_left -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.frames_left != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} declared frames were never written",
                self.frames_left
            )));
        }
        self.payload.flush()?;
        Ok(())
    }
}

/// Ground-truth parameter file: the per-interferometer vectors together
/// with the affine normalized-coordinate map they are expressed in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    /// Coefficients apply to `2 (sigma - sigma_min)/(sigma_max - sigma_min) - 1`.
    pub normalization: NormalizationInfo,
    pub params: Vec<TransmittanceParams>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalizationInfo {
    pub sigma_min_cm1: f64,
    pub sigma_max_cm1: f64,
    pub basis: NormalizedBasis,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizedBasis {
    /// Monomials of the affine map of `[sigma_min, sigma_max]` onto [-1, 1].
    AffineUnitInterval,
}

pub fn write_truth(path: &Path, params: &[TransmittanceParams], grid: &WavenumberGrid) -> Result<()> {
    write_json(
        path,
        &TruthFile {
            normalization: NormalizationInfo {
                sigma_min_cm1: grid.sigma_min(),
                sigma_max_cm1: grid.sigma_max(),
                basis: NormalizedBasis::AffineUnitInterval,
            },
            params: params.to_vec(),
        },
    )
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    read_json(path)
}

pub fn write_layout(path: &Path, layout: &LayoutConfig) -> Result<()> {
    write_json(path, layout)
}

pub fn read_layout(path: &Path) -> Result<LayoutConfig> {
    read_json(path)
}

/// Characterization results with everything a report needs to be rebuilt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFile {
    pub format_version: u32,
    pub layout: LayoutConfig,
    pub wavenumbers_cm1: Vec<f64>,
    pub regime: WaveRegime,
    pub initializer: Initializer,
    pub degree: usize,
    pub fixed_gain: bool,
    /// `central`, `all`, or `pixels`.
    pub pixel_mode: String,
    pub normalization: NormalizationInfo,
    pub results: Vec<CharacterizationResult>,
    pub failures: Vec<PixelFailure>,
}

pub fn write_results(path: &Path, results: &ResultsFile) -> Result<()> {
    write_json(path, results)
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let file: ResultsFile = read_json(path)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormatVersion(file.format_version));
    }
    Ok(file)
}

/// CSV rendering of per-pixel results: one row per pixel with every model
/// parameter, the step intermediates, the fit RMSE and the convergence flag.
pub fn results_to_csv(results: &[CharacterizationResult], degree: usize) -> String {
    let mut header = String::from("interferometer,row,col");
    for m in 0..=degree {
        header.push_str(&format!(",a{m}"));
    }
    for m in 0..=degree {
        header.push_str(&format!(",r{m}"));
    }
    header.push_str(
        ",opd_cm,phase_shift,rmse,converged,feasible,iterations,\
         init_opd_cm,init_reflectivity,init_phase_shift,init_degenerate\n",
    );
    let mut out = header;
    for r in results {
        out.push_str(&format!(
            "{},{},{}",
            r.interferometer.map_or(String::new(), |k| k.to_string()),
            r.pixel.0,
            r.pixel.1
        ));
        for c in r.params.gain_coeffs() {
            out.push_str(&format!(",{c}"));
        }
        for c in r.params.refl_coeffs() {
            out.push_str(&format!(",{c}"));
        }
        out.push_str(&format!(
            ",{},{},{},{},{},{},{},{},{},{}\n",
            r.params.opd_cm(),
            r.params.phase_shift(),
            r.rmse,
            r.converged,
            r.feasible,
            r.refine.iterations,
            r.init.opd_cm,
            r.init.reflectivity,
            r.init.phase_shift,
            r.init.degenerate
        ));
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}
