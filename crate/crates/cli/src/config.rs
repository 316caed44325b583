use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eit3d_core::dataset::{CategoryCounts, SimulationSettings};
use eit3d_core::protocol::{generate_adjacent_protocol, Protocol};
use eit3d_net::{Preset, TrainConfig};
use serde::{Deserialize, Serialize};

/// Where the measurement protocol comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSource {
    /// Adjacent drive/measure over every ring of the tank geometry.
    Adjacent,
    /// Plain-text protocol listing, one row per line.
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything a run needs, loadable from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: SimulationSettings,
    pub protocol: ProtocolSource,
    /// Phantoms per category: 2obj-, 2obj+-, 3obj-, 3obj+-.
    pub counts: CategoryCounts,
    pub seed: u64,
    pub preset: Preset,
    pub train: TrainConfig,
    /// Baseline regularization weight; `None` picks the trace-ratio default.
    pub lambda: Option<f64>,
    pub eval_noise_snr_db: f64,
    pub eval_seed: u64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            simulation: SimulationSettings::default(),
            protocol: ProtocolSource::Adjacent,
            counts: [10, 10, 10, 10],
            seed: 0,
            preset: Preset::Desk,
            train: TrainConfig::default(),
            lambda: None,
            eval_noise_snr_db: 30.0,
            eval_seed: 0,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_protocol(&self) -> Result<Protocol> {
        let g = &self.simulation.geometry;
        let protocol = match &self.protocol {
            ProtocolSource::Adjacent => generate_adjacent_protocol(g.electrodes_per_ring, g.ring_heights.len())?,
            ProtocolSource::File { path } => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading protocol {}", path.display()))?;
                let id = path.file_stem().map_or("file".into(), |s| s.to_string_lossy().into_owned());
                Protocol::from_text(id, &text)?
            }
        };
        protocol.check_electrode_count(g.electrode_count())?;
        Ok(protocol)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.geometry.validate()?;
        self.simulation.phantom.validate()?;
        self.train.validate()?;
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                bail!("lambda must be finite and non-negative, got {l}");
            }
        }
        if !self.eval_noise_snr_db.is_finite() {
            bail!("eval_noise_snr_db must be finite");
        }
        Ok(())
    }
}
