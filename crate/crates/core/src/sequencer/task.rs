//! The seven pre-training task layouts.
//!
//! Notation used in the docs below, for segment `i`:
//! `a_i` is the full audio input (semantic tokens plus continuous features),
//! `d_i` the semantic tokens alone, `t_i` the text tokens, and `d_i/t_i` the
//! two predicted in parallel. Elements written in brackets receive loss.
//!
//! | kind                  | layout                                       |
//! |-----------------------|----------------------------------------------|
//! | `TextOnly`            | `[t_1] [t_2] ... [t_N]`                      |
//! | `AudioOnly`           | `[d_1] [d_2] ... [d_N]`                      |
//! | `AsrMap`              | `a_1 [t_1] a_2 [t_2] ... a_N [t_N]`          |
//! | `TtsMap`              | `t_1 [d_1] t_2 [d_2] ... t_N [d_N]`          |
//! | `Audio2Semantic`      | `a_1 [d_2] a_3 [d_4] ... a_N-1 [d_N]`        |
//! | `Audio2Text`          | `a_1 [t_2] a_3 [t_4] ... a_N-1 [t_N]`        |
//! | `Audio2SemanticText`  | `a_1 [d_2/t_2] ... a_N-1 [d_N/t_N]`          |
//!
//! In `d_i/t_i` elements the audio stream is delayed by a run of blanks and
//! the text stream padded at its end to the same length.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::align::{apply_delay, pad_to, AlignedPair, DEFAULT_AUDIO_DELAY};
use crate::domain::TokenStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TextOnly,
    AudioOnly,
    #[serde(rename = "asr")]
    AsrMap,
    #[serde(rename = "tts")]
    TtsMap,
    #[serde(rename = "audio_to_semantic")]
    Audio2Semantic,
    #[serde(rename = "audio_to_text")]
    Audio2Text,
    #[serde(rename = "audio_to_semantic_text")]
    Audio2SemanticText,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::TextOnly,
        TaskKind::AudioOnly,
        TaskKind::AsrMap,
        TaskKind::TtsMap,
        TaskKind::Audio2Semantic,
        TaskKind::Audio2Text,
        TaskKind::Audio2SemanticText,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TextOnly => "text_only",
            TaskKind::AudioOnly => "audio_only",
            TaskKind::AsrMap => "asr",
            TaskKind::TtsMap => "tts",
            TaskKind::Audio2Semantic => "audio_to_semantic",
            TaskKind::Audio2Text => "audio_to_text",
            TaskKind::Audio2SemanticText => "audio_to_semantic_text",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_interleaving(self) -> bool {
        matches!(
            self,
            TaskKind::Audio2Semantic | TaskKind::Audio2Text | TaskKind::Audio2SemanticText
        )
    }

    /// Whether every segment needs a transcript.
    pub fn needs_text(self) -> bool {
        !matches!(self, TaskKind::AudioOnly | TaskKind::Audio2Semantic)
    }

    pub(crate) fn index(self) -> usize {
        TaskKind::ALL.iter().position(|&k| k == self).expect("listed")
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a position feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Semantic tokens plus continuous features (`a_i`); never a loss target.
    FullAudio,
    /// Semantic tokens only (`d_i`).
    SemanticOnly,
    TextOnly,
    /// Parallel semantic and text tokens (`d_i/t_i`).
    SemanticText,
}

impl InputMode {
    pub fn tag(self) -> &'static str {
        match self {
            InputMode::FullAudio => "a",
            InputMode::SemanticOnly => "d",
            InputMode::TextOnly => "t",
            InputMode::SemanticText => "d/t",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            InputMode::FullAudio => 0,
            InputMode::SemanticOnly => 1,
            InputMode::TextOnly => 2,
            InputMode::SemanticText => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => InputMode::FullAudio,
            1 => InputMode::SemanticOnly,
            2 => InputMode::TextOnly,
            3 => InputMode::SemanticText,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub audio: Option<u32>,
    pub text: Option<u32>,
    pub segment: usize,
    pub mode: InputMode,
}

/// Which pre-training or fine-tuning recipe produced a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceLabel {
    Pretrain(TaskKind),
    Sft(super::sft::SftTask),
}

/// A fully laid out training example with per-stream loss masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub label: SequenceLabel,
    pub positions: Vec<Position>,
    pub loss_mask_audio: Vec<bool>,
    pub loss_mask_text: Vec<bool>,
    pub audio_blank: u32,
    pub text_blank: Option<u32>,
    /// Blanks prepended to the audio stream of `d/t` elements.
    pub delay: usize,
}

/// One contiguous run of positions belonging to one segment element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub segment: usize,
    pub mode: InputMode,
    pub len: usize,
    pub loss_audio: bool,
    pub loss_text: bool,
}

/// Token streams recovered from a sequence by stripping delay and padding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RecoveredSegment {
    pub audio: Option<Vec<u32>>,
    pub text: Option<Vec<u32>>,
}

impl TaskSequence {
    fn new(label: SequenceLabel, audio_blank: u32, text_blank: Option<u32>, delay: usize) -> Self {
        Self {
            label,
            positions: Vec::new(),
            loss_mask_audio: Vec::new(),
            loss_mask_text: Vec::new(),
            audio_blank,
            text_blank,
            delay,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub(crate) fn push(&mut self, pos: Position, loss_audio: bool, loss_text: bool) {
        self.positions.push(pos);
        self.loss_mask_audio.push(loss_audio);
        self.loss_mask_text.push(loss_text);
    }

    pub(crate) fn push_full_audio(&mut self, segment: usize, audio: &TokenStream) {
        for &a in audio.tokens() {
            let pos = Position { audio: Some(a), text: None, segment, mode: InputMode::FullAudio };
            self.push(pos, false, false);
        }
    }

    pub(crate) fn push_semantic(&mut self, segment: usize, audio: &TokenStream, loss: bool) {
        for &a in audio.tokens() {
            let pos = Position { audio: Some(a), text: None, segment, mode: InputMode::SemanticOnly };
            self.push(pos, loss, false);
        }
    }

    pub(crate) fn push_text(&mut self, segment: usize, text: &TokenStream, loss: bool) {
        for &t in text.tokens() {
            let pos = Position { audio: None, text: Some(t), segment, mode: InputMode::TextOnly };
            self.push(pos, false, loss);
        }
    }

    /// Delayed audio paired position-wise with end-padded text; both carry loss.
    pub(crate) fn push_dual(&mut self, segment: usize, audio: &TokenStream, text: &TokenStream) {
        let delayed = apply_delay(audio, self.delay);
        let text = pad_to(text, delayed.len());
        for (&a, &t) in delayed.tokens().iter().zip(text.tokens()) {
            let pos = Position { audio: Some(a), text: Some(t), segment, mode: InputMode::SemanticText };
            self.push(pos, true, true);
        }
    }

    /// Run-length view: one entry per emitted element.
    pub fn elements(&self) -> Vec<Element> {
        let mut out: Vec<Element> = Vec::new();
        for (i, p) in self.positions.iter().enumerate() {
            let (la, lt) = (self.loss_mask_audio[i], self.loss_mask_text[i]);
            match out.last_mut() {
                Some(e) if e.segment == p.segment && e.mode == p.mode => {
                    e.len += 1;
                    e.loss_audio |= la;
                    e.loss_text |= lt;
                }
                _ => out.push(Element {
                    segment: p.segment,
                    mode: p.mode,
                    len: 1,
                    loss_audio: la,
                    loss_text: lt,
                }),
            }
        }
        out
    }

    /// Element layout such as `a1 [t1] a2 [t2]`, with 1-based segment numbers
    /// and loss-bearing elements in brackets.
    pub fn pattern(&self) -> String {
        self.elements()
            .iter()
            .map(|e| {
                let body = match e.mode {
                    InputMode::SemanticText => format!("d{0}/t{0}", e.segment + 1),
                    m => format!("{}{}", m.tag(), e.segment + 1),
                };
                if e.loss_audio || e.loss_text {
                    format!("[{body}]")
                } else {
                    body
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Strips delay blanks and trailing padding, recovering the raw streams of
    /// each segment that appears in the sequence.
    pub fn recover_streams(&self) -> Vec<(usize, RecoveredSegment)> {
        let mut out: Vec<(usize, RecoveredSegment)> = Vec::new();
        let mut start = 0;
        for e in self.elements() {
            let positions = &self.positions[start..start + e.len];
            start += e.len;
            let entry = match out.iter_mut().find(|(s, _)| *s == e.segment) {
                Some((_, r)) => r,
                None => {
                    out.push((e.segment, RecoveredSegment::default()));
                    &mut out.last_mut().expect("pushed").1
                }
            };
            let audio: Vec<u32> = positions.iter().filter_map(|p| p.audio).collect();
            let text: Vec<u32> = positions.iter().filter_map(|p| p.text).collect();
            if !audio.is_empty() {
                let skip = if e.mode == InputMode::SemanticText { self.delay } else { 0 };
                entry.audio = Some(strip_trailing(&audio[skip.min(audio.len())..], self.audio_blank));
            }
            if let (false, Some(blank)) = (text.is_empty(), self.text_blank) {
                entry.text = Some(strip_trailing(&text, blank));
            }
        }
        out
    }

    /// Structural checks every valid sequence satisfies.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.loss_mask_audio.len() != n || self.loss_mask_text.len() != n {
            return Err(Error::Integrity("loss mask length differs from sequence length".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            let shape_ok = match p.mode {
                InputMode::FullAudio | InputMode::SemanticOnly => p.audio.is_some() && p.text.is_none(),
                InputMode::TextOnly => p.audio.is_none() && p.text.is_some(),
                InputMode::SemanticText => p.audio.is_some() && p.text.is_some(),
            };
            let loss_ok = (!self.loss_mask_audio[i] || p.audio.is_some())
                && (!self.loss_mask_text[i] || p.text.is_some())
                && !(p.mode == InputMode::FullAudio && (self.loss_mask_audio[i] || self.loss_mask_text[i]));
            if !shape_ok || !loss_ok {
                return Err(Error::Integrity(format!("position {i} is malformed: {p:?}")));
            }
            if p.text.is_some() && self.text_blank.is_none() {
                return Err(Error::Integrity("text tokens present without a text blank id".into()));
            }
        }
        Ok(())
    }
}

fn strip_trailing(tokens: &[u32], blank: u32) -> Vec<u32> {
    let end = tokens.iter().rposition(|&t| t != blank).map_or(0, |i| i + 1);
    tokens[..end].to_vec()
}

/// Placement of context and target segments in interleaving tasks.
///
/// By default odd segments (1-based) are context `a_i` and even segments are
/// targets, which needs an even segment count. `leading_target` makes the
/// first segment a target instead; `trailing_context` lets the last segment
/// be a context `a_N`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleaveLayout {
    pub leading_target: bool,
    pub trailing_context: bool,
}

impl InterleaveLayout {
    fn is_target(&self, index: usize) -> bool {
        (index % 2 == 1) != self.leading_target
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceOptions {
    pub layout: InterleaveLayout,
    pub delay: usize,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            layout: InterleaveLayout::default(),
            delay: DEFAULT_AUDIO_DELAY,
        }
    }
}

fn shared_blanks(segments: &[AlignedPair]) -> Result<(u32, Option<u32>)> {
    let first = &segments[0];
    let audio_blank = first.audio.blank_id();
    let text_blank = segments.iter().find_map(|s| s.text.as_ref().map(|t| t.blank_id()));
    for s in segments {
        if s.audio.blank_id() != audio_blank {
            return Err(Error::contract("segments disagree on the audio blank id"));
        }
        if let (Some(t), Some(b)) = (&s.text, text_blank) {
            if t.blank_id() != b {
                return Err(Error::contract("segments disagree on the text blank id"));
            }
        }
    }
    Ok((audio_blank, text_blank))
}

fn text_of(pair: &AlignedPair, index: usize) -> Result<&TokenStream> {
    pair.text
        .as_ref()
        .ok_or_else(|| Error::contract(format!("segment {} has no text stream", index + 1)))
}

/// Lays out `segments` for one pre-training task.
pub fn build_task_sequence(
    kind: TaskKind,
    segments: &[AlignedPair],
    opts: &SequenceOptions,
) -> Result<TaskSequence> {
    if segments.is_empty() {
        return Err(Error::contract(format!("{kind} needs at least one segment")));
    }
    if kind.is_interleaving() {
        if segments.len() < 2 {
            return Err(Error::contract(format!(
                "{kind} interleaves context and target segments and needs at least 2, got {}",
                segments.len()
            )));
        }
        let last_is_target = opts.layout.is_target(segments.len() - 1);
        if last_is_target == opts.layout.trailing_context {
            return Err(Error::contract(format!(
                "{} segments do not fit the {kind} layout {:?}",
                segments.len(),
                opts.layout
            )));
        }
    }
    let (audio_blank, text_blank) = shared_blanks(segments)?;
    let mut seq = TaskSequence::new(SequenceLabel::Pretrain(kind), audio_blank, text_blank, opts.delay);

    for (i, pair) in segments.iter().enumerate() {
        match kind {
            TaskKind::TextOnly => seq.push_text(i, text_of(pair, i)?, true),
            TaskKind::AudioOnly => seq.push_semantic(i, &pair.audio, true),
            TaskKind::AsrMap => {
                let text = text_of(pair, i)?;
                seq.push_full_audio(i, &pair.audio);
                seq.push_text(i, text, true);
            }
            TaskKind::TtsMap => {
                seq.push_text(i, text_of(pair, i)?, false);
                seq.push_semantic(i, &pair.audio, true);
            }
            TaskKind::Audio2Semantic => {
                if opts.layout.is_target(i) {
                    seq.push_semantic(i, &pair.audio, true);
                } else {
                    seq.push_full_audio(i, &pair.audio);
                }
            }
            TaskKind::Audio2Text => {
                if opts.layout.is_target(i) {
                    seq.push_text(i, text_of(pair, i)?, true);
                } else {
                    seq.push_full_audio(i, &pair.audio);
                }
            }
            TaskKind::Audio2SemanticText => {
                if opts.layout.is_target(i) {
                    seq.push_dual(i, &pair.audio, text_of(pair, i)?);
                } else {
                    seq.push_full_audio(i, &pair.audio);
                }
            }
        }
    }
    Ok(seq)
}
