//! Supervised fine-tuning examples: a natural-language instruction drawn from
//! a per-task pool, rendered as audio or text by a fair coin, followed by the
//! user audio and the response.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::align::{AlignedPair, DEFAULT_AUDIO_DELAY};
use super::task::{SequenceLabel, TaskSequence};
use crate::domain::TokenStream;
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const ASR_POOL_SIZE: usize = 200;
pub const OTHER_POOL_SIZE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTask {
    Asr,
    /// Audio question answering.
    Aqa,
    /// Audio captioning.
    Aac,
    /// Speech emotion recognition.
    Ser,
    /// Sound event classification.
    Sec,
    /// Acoustic scene classification.
    Asc,
    /// Audio-to-text chat.
    Chat,
    /// Speech-to-speech conversation.
    Conversation,
}

impl SftTask {
    pub const ALL: [SftTask; 8] = [
        SftTask::Asr,
        SftTask::Aqa,
        SftTask::Aac,
        SftTask::Ser,
        SftTask::Sec,
        SftTask::Asc,
        SftTask::Chat,
        SftTask::Conversation,
    ];

    pub fn pool_size(self) -> usize {
        match self {
            SftTask::Asr => ASR_POOL_SIZE,
            _ => OTHER_POOL_SIZE,
        }
    }

    pub(crate) fn code(self) -> u8 {
        SftTask::ALL.iter().position(|&t| t == self).expect("listed") as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        SftTask::ALL.get(code as usize).copied()
    }
}

/// One instruction in both renderings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub text: TokenStream,
    pub audio: TokenStream,
}

#[derive(Debug, Clone, Default)]
pub struct InstructionPools {
    pools: BTreeMap<SftTask, Vec<Instruction>>,
}

impl InstructionPools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: SftTask, pool: Vec<Instruction>) {
        self.pools.insert(task, pool);
    }

    pub fn get(&self, task: SftTask) -> Option<&[Instruction]> {
        self.pools.get(&task).map(Vec::as_slice)
    }

    /// Synthetic pools of the standard sizes: 200 ASR instructions and 30 for
    /// every other task. Token ids stay below the given blanks.
    pub fn synthetic(seed: u64, audio_blank: u32, text_blank: u32) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut pools = Self::new();
        for task in SftTask::ALL {
            let pool = (0..task.pool_size())
                .map(|_| {
                    let t_len = rng.gen_range(4..16);
                    let a_len = rng.gen_range(8..40);
                    Ok(Instruction {
                        text: TokenStream::text((0..t_len).map(|_| rng.gen_range(0..text_blank)).collect(), text_blank)?,
                        audio: TokenStream::semantic(
                            (0..a_len).map(|_| rng.gen_range(0..audio_blank)).collect(),
                            audio_blank,
                        )?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pools.insert(task, pool);
        }
        Ok(pools)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SftResponse {
    Text(TokenStream),
    /// Jointly predicted speech and text.
    Speech(AlignedPair),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftDatum {
    pub task: SftTask,
    pub user_audio: TokenStream,
    pub response: SftResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionModality {
    Audio,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub sequence: TaskSequence,
    pub instruction_index: usize,
    pub modality: InstructionModality,
}

/// Segment slots used in SFT sequences.
pub const INSTRUCTION_SEGMENT: usize = 0;
pub const USER_AUDIO_SEGMENT: usize = 1;
pub const RESPONSE_SEGMENT: usize = 2;

/// Builds one SFT example. Only response positions carry loss.
pub fn build_sft_example<R: Rng + ?Sized>(
    datum: &SftDatum,
    pools: &InstructionPools,
    rng: &mut R,
) -> Result<SftExample> {
    let pool = pools
        .get(datum.task)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| Error::config(format!("instruction pool for {:?} is empty", datum.task)))?;
    let instruction_index = rng.gen_range(0..pool.len());
    let modality = if rng.gen_bool(0.5) {
        InstructionModality::Audio
    } else {
        InstructionModality::Text
    };
    let instruction = &pool[instruction_index];

    let text_blank = match &datum.response {
        SftResponse::Text(t) => t.blank_id(),
        SftResponse::Speech(p) => p
            .text
            .as_ref()
            .map(|t| t.blank_id())
            .ok_or_else(|| Error::contract("speech response needs a text stream"))?,
    };
    let mut seq = TaskSequence {
        label: SequenceLabel::Sft(datum.task),
        positions: Vec::new(),
        loss_mask_audio: Vec::new(),
        loss_mask_text: Vec::new(),
        audio_blank: datum.user_audio.blank_id(),
        text_blank: Some(text_blank),
        delay: DEFAULT_AUDIO_DELAY,
    };
    match modality {
        InstructionModality::Audio => seq.push_full_audio(INSTRUCTION_SEGMENT, &instruction.audio),
        InstructionModality::Text => seq.push_text(INSTRUCTION_SEGMENT, &instruction.text, false),
    }
    seq.push_full_audio(USER_AUDIO_SEGMENT, &datum.user_audio);
    match &datum.response {
        SftResponse::Text(t) => seq.push_text(RESPONSE_SEGMENT, t, true),
        SftResponse::Speech(pair) => {
            let text = pair.text.as_ref().expect("checked above");
            seq.push_dual(RESPONSE_SEGMENT, &pair.audio, text);
        }
    }
    Ok(SftExample {
        sequence: seq,
        instruction_index,
        modality,
    })
}
