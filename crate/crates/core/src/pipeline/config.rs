use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::AnnotatePolicy;
use crate::domain::Vocab;
use crate::error::{Error, Result};
use crate::orchestrator::OrchestratorConfig;
use crate::refine::RefineConfig;
use crate::sequencer::{TaskWeights, DEFAULT_AUDIO_DELAY};
use crate::stream::StreamConfig;

pub const CONFIG_ENV: &str = "KAF_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Sequences drawn per asset.
    pub sequences_per_asset: usize,
    /// Upper bound on segments laid out in one sequence.
    pub max_segments: usize,
    pub delay: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            sequences_per_asset: 8,
            max_segments: 4,
            delay: DEFAULT_AUDIO_DELAY,
        }
    }
}

/// Every knob of a pipeline run. The canonical JSON form (sorted keys, no
/// whitespace) without `workers` is hashed and stamped into outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub vocab: Vocab,
    pub refine: RefineConfig,
    pub annotate: AnnotatePolicy,
    pub weights: TaskWeights,
    pub pretrain: PretrainConfig,
    pub stream: StreamConfig,
    pub conversation: OrchestratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            vocab: Vocab::default(),
            refine: RefineConfig::default(),
            annotate: AnnotatePolicy::default(),
            weights: TaskWeights::default(),
            pretrain: PretrainConfig::default(),
            stream: StreamConfig::default(),
            conversation: OrchestratorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loads `path`, else the file named by `KAF_CONFIG`, else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        if self.pretrain.max_segments == 0 {
            return Err(Error::config("pretrain.max_segments must be at least 1"));
        }
        self.vocab.validate()?;
        self.refine.validate()?;
        self.annotate.validate()?;
        self.weights.validate()?;
        self.stream.validate()?;
        self.conversation.validate()
    }

    /// Sorted-key JSON of the whole configuration.
    pub fn canonical_json(&self) -> Result<String> {
        // serde_json's default map is ordered, so the value tree is already sorted
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    /// SHA-256 over the canonical JSON with `workers` removed, which must
    /// not influence outputs.
    pub fn config_hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("workers");
        }
        Ok(hex::encode(Sha256::digest(serde_json::to_string(&value)?.as_bytes())))
    }
}
