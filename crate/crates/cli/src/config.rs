//! Run configuration: a single JSON document covering the device layout,
//! wavenumber sweep, ground-truth generation, noise and pipeline settings.
//! Every command-line flag has a config-file equivalent; flags win.

use serde::{Deserialize, Serialize};
use std::path::Path;

use etalon_core::estimate::IrcaConfig;
use etalon_core::model::{WaveRegime, WavenumberGrid};
use etalon_core::simulate::{LayoutConfig, NoiseModel, PowerSpec, TruthSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Regular {
        min_cm1: f64,
        max_cm1: f64,
        points: usize,
    },
    Explicit {
        wavenumbers_cm1: Vec<f64>,
    },
}

impl GridSpec {
    pub fn build(&self) -> CliResult<WavenumberGrid> {
        let grid = match self {
            GridSpec::Regular {
                min_cm1,
                max_cm1,
                points,
            } => WavenumberGrid::regular(*min_cm1, *max_cm1, *points),
            GridSpec::Explicit { wavenumbers_cm1 } => {
                WavenumberGrid::new(wavenumbers_cm1.clone())
            }
        };
        grid.map_err(CliError::config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub layout: Option<LayoutConfig>,
    pub grid: Option<GridSpec>,
    pub truth: Option<TruthSpec>,
    pub noise: NoiseModel,
    pub incident_power: PowerSpec,
    /// Wave model used by the forward simulation.
    pub regime: WaveRegime,
    pub irca: IrcaConfig,
    pub seed: u64,
    pub out_dir: Option<String>,
    /// `central` or `all`.
    pub pixels: String,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            layout: None,
            grid: None,
            truth: None,
            noise: NoiseModel::None,
            incident_power: PowerSpec::default(),
            regime: WaveRegime::Infinite,
            irca: IrcaConfig::default(),
            seed: 0,
            out_dir: None,
            pixels: "central".to_string(),
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}

/// Flag values shared by several subcommands; `None` means "keep the
/// config-file value".
#[derive(Debug, Clone, Default)]
pub struct PipelineFlags {
    pub regime: Option<WaveRegime>,
    pub initializer: Option<etalon_core::estimate::Initializer>,
    pub degree: Option<usize>,
    pub kernel: Option<usize>,
    pub percentile: Option<f64>,
    pub fixed_gain: bool,
    pub paper_reflectivity_inversion: bool,
}

impl PipelineFlags {
    pub fn apply(&self, irca: &mut IrcaConfig) {
        if let Some(r) = self.regime {
            irca.regime = r;
        }
        if let Some(i) = self.initializer {
            irca.initializer = i;
        }
        if let Some(d) = self.degree {
            irca.degree = d;
        }
        if let Some(k) = self.kernel {
            irca.kernel = k;
        }
        if let Some(p) = self.percentile {
            irca.percentile = p;
        }
        if self.fixed_gain {
            irca.fixed_gain = true;
        }
        if self.paper_reflectivity_inversion {
            irca.reflectivity_inversion = etalon_core::estimate::InversionMode::Legacy;
        }
    }
}

pub fn parse_pixels(s: &str) -> CliResult<etalon_core::estimate::PixelSelector> {
    match s {
        "central" => Ok(etalon_core::estimate::PixelSelector::Central),
        "all" => Ok(etalon_core::estimate::PixelSelector::FullPlane),
        _ => Err(CliError::config(format!(
            "invalid pixel selector {s:?}; expected central|all"
        ))),
    }
}
