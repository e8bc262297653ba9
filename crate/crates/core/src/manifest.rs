//! Run manifests: everything needed to repeat a run, plus what it produced.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::params::ParamConfig;
use crate::protocol::{Calibration, ProtocolParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Ground,
    Excited,
    Mixed,
}

/// Fully resolved run request. Re-executing it reproduces the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub subcommand: String,
    pub seed: u64,
    pub traj: usize,
    pub initial: InitialState,
    /// Turn qubit relaxation off.
    pub no_decay: bool,
    pub record_interval_ns: f64,
    pub cycles: usize,
    /// Wait before the unconditional pi-pulse in memory runs (us).
    pub twait_us: Option<f64>,
    /// Bifurcation sweep: number of drive points and top drive relative to
    /// the upper critical drive.
    pub points: usize,
    pub max_power_factor: f64,
    /// Oracle comparison drives in units of sqrt(kappa_d); empty means
    /// calibrated below / near / above threshold drives.
    pub drives: Vec<f64>,
    pub dim: usize,
    pub params: ParamConfig,
    pub protocol: ProtocolParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub status: String,
    pub wall_time_s: f64,
    pub schedule_hash: Option<String>,
    pub outputs: Vec<String>,
    pub calibration: Option<Calibration>,
    pub settings: RunSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("could not read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not parse manifest: {0}")]
    Parse(String),
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ManifestError> {
        toml::from_str(text).map_err(|e| ManifestError::Parse(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
