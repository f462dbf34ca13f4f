use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::task::TaskKind;
use crate::error::{Error, Result};
use crate::rng::{seeded, PipelineRng};

/// Relative sampling weight of each pre-training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskWeights {
    pub text_only: f64,
    pub audio_only: f64,
    pub asr: f64,
    pub tts: f64,
    pub audio_to_semantic: f64,
    pub audio_to_text: f64,
    pub audio_to_semantic_text: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            text_only: 7.0,
            audio_only: 1.0,
            asr: 1.0,
            tts: 1.0,
            audio_to_semantic: 1.0,
            audio_to_text: 1.0,
            audio_to_semantic_text: 2.0,
        }
    }
}

impl TaskWeights {
    /// Weights in [`TaskKind::ALL`] order.
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.text_only,
            self.audio_only,
            self.asr,
            self.tts,
            self.audio_to_semantic,
            self.audio_to_text,
            self.audio_to_semantic_text,
        ]
    }

    pub fn weight(&self, kind: TaskKind) -> f64 {
        self.as_array()[kind.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::config(format!("task weights must all be positive: {self:?}")))
        }
    }

    /// Normalized sampling probabilities in [`TaskKind::ALL`] order.
    pub fn probabilities(&self) -> [f64; 7] {
        let w = self.as_array();
        let total: f64 = w.iter().sum();
        w.map(|x| x / total)
    }
}

/// Seeded sampler over task kinds.
#[derive(Debug, Clone)]
pub struct TaskMixer {
    weights: TaskWeights,
    dist: WeightedIndex<f64>,
    rng: PipelineRng,
}

impl TaskMixer {
    pub fn new(weights: TaskWeights, seed: u64) -> Result<Self> {
        Self::with_rng(weights, seeded(seed))
    }

    pub fn with_rng(weights: TaskWeights, rng: PipelineRng) -> Result<Self> {
        weights.validate()?;
        let dist = WeightedIndex::new(weights.as_array())
            .map_err(|e| Error::config(format!("task weights: {e}")))?;
        Ok(Self { weights, dist, rng })
    }

    pub fn weights(&self) -> &TaskWeights {
        &self.weights
    }

    pub fn sample_task(&mut self) -> TaskKind {
        TaskKind::ALL[self.dist.sample(&mut self.rng)]
    }
}
