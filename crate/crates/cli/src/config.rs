use std::path::{Path, PathBuf};

use serde::Deserialize;
use surrmeta::data::ColumnMapping;
use surrmeta::{MetaModel, SimConfig, SurrError};

/// Run configuration read from `--config`. Every field is optional; command
/// line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epsilon: Option<f64>,
    pub epsilon_power: Option<(f64, f64)>,
    pub alpha: Option<f64>,
    pub meta: Option<MetaModel>,
    pub split_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub min_n: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub top_k: Option<usize>,
    pub bootstrap: Option<usize>,
    pub svg: Option<bool>,
    pub columns: Option<ColumnMapping>,
    /// Simulation settings, used by `simulate`.
    pub simulation: Option<SimConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, SurrError> {
        let text = std::fs::read_to_string(path).map_err(|source| SurrError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| SurrError::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}
