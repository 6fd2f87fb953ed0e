//! The single JSON run configuration, with every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AlignmentConfig;
use crate::labelling::LabelRule;
use crate::models::{ModelKind, ShallowConvNetSpec, TrainConfig};
use crate::preprocess::PreprocessConfig;
use crate::session::Horizon;
use crate::split::SplitConfig;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub horizons_ms: Vec<Horizon>,
    pub models: Vec<ModelKind>,
    /// Existing session directories. When empty, `n_sessions` synthetic
    /// sessions are generated.
    pub sessions: Vec<PathBuf>,
    pub n_sessions: usize,
    pub alignment: AlignmentConfig,
    pub labelling: LabelRule,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub shallow_convnet: ShallowConvNetSpec,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            jobs: 0,
            horizons_ms: Horizon::all(),
            models: vec![ModelKind::Linear, ModelKind::ShallowConvnet],
            sessions: Vec::new(),
            n_sessions: 3,
            alignment: AlignmentConfig::default(),
            labelling: LabelRule::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            shallow_convnet: ShallowConvNetSpec::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons_ms.is_empty() {
            return Err(Error::Config("horizons_ms is empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models is empty".into()));
        }
        if self.sessions.is_empty() && self.n_sessions == 0 {
            return Err(Error::Config("no sessions given and n_sessions is 0".into()));
        }
        self.alignment.validate()?;
        self.labelling.validate()?;
        self.preprocess.validate(self.synth.sample_rate_hz)?;
        self.split.validate()?;
        self.train.validate()?;
        if self.models.contains(&ModelKind::ShallowConvnet) {
            self.shallow_convnet.validate(self.split.window_len)?;
        }
        if self.sessions.is_empty() {
            self.synth.validate()?;
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("bcv-out"))
    }
}
