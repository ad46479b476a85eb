//! Simulation and characterization of multi-aperture Fabry-Perot imaging
//! spectrometers.
//!
//! The crate has two halves. The forward half ([`model`], [`simulate`])
//! evaluates per-pixel transmittance responses and generates synthetic
//! monochromatic flat-field acquisition datacubes from a device layout. The
//! inverse half ([`stats`], [`lm`], [`estimate`], [`report`]) extracts the
//! per-pixel sufficient statistics from such a datacube and recovers the
//! response parameters (gain polynomial, reflectivity polynomial, OPD,
//! phase shift) with a three-step pipeline: polynomial gain fit, periodogram
//! based initialization, and damped least-squares refinement.

pub mod error;
pub mod estimate;
pub mod io;
pub mod lm;
pub mod model;
pub mod report;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use estimate::{
    CharacterizationResult, DeviceCharacterization, Initializer, IrcaConfig, PixelSelector,
};
pub use lm::{LmConfig, LmReport};
pub use model::{TransmittanceParams, WaveRegime, WavenumberGrid};
pub use simulate::{Datacube, DeviceLayout, LayoutConfig, NoiseModel, PowerSpec, TruthSpec};
pub use stats::PixelStatistics;
