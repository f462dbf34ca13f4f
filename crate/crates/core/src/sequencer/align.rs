use serde::{Deserialize, Serialize};

use crate::domain::{FeatureHandle, StreamKind, TokenStream};
use crate::error::{Error, Result};

/// Audio-side delay, in blanks, for jointly predicted audio and text.
pub const DEFAULT_AUDIO_DELAY: usize = 6;

/// Semantic audio and text for one segment, padded to a common length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub audio: TokenStream,
    /// Absent for segments without a transcript.
    pub text: Option<TokenStream>,
    pub features: Option<FeatureHandle>,
}

impl AlignedPair {
    /// A segment with audio only (no transcript).
    pub fn audio_only(audio: TokenStream) -> Result<Self> {
        if audio.kind() != StreamKind::SemanticAudio || audio.is_empty() {
            return Err(Error::contract("audio-only pair needs a non-empty semantic stream"));
        }
        Ok(Self {
            audio,
            text: None,
            features: None,
        })
    }

    pub fn with_features(mut self, features: FeatureHandle) -> Result<Self> {
        let raw_len = self.audio.tokens().iter().filter(|&&t| t != self.audio.blank_id()).count();
        if features.frames != raw_len {
            return Err(Error::contract(format!(
                "feature handle has {} frames, audio stream has {raw_len}",
                features.frames
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Aligned length shared by both streams.
    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }
}

fn padded(stream: &TokenStream, len: usize) -> TokenStream {
    let mut tokens = stream.tokens().to_vec();
    tokens.resize(len.max(tokens.len()), stream.blank_id());
    TokenStream::from_parts(stream.kind(), tokens, stream.blank_id())
}

/// Pads the shorter stream at its end with its own blank id.
pub fn align_streams(audio: &TokenStream, text: &TokenStream) -> Result<AlignedPair> {
    if audio.kind() != StreamKind::SemanticAudio || text.kind() != StreamKind::Text {
        return Err(Error::contract(format!(
            "align_streams expects (semantic_audio, text), got ({:?}, {:?})",
            audio.kind(),
            text.kind()
        )));
    }
    if audio.is_empty() || text.is_empty() {
        return Err(Error::contract("cannot align an empty stream"));
    }
    let len = audio.len().max(text.len());
    Ok(AlignedPair {
        audio: padded(audio, len),
        text: Some(padded(text, len)),
        features: None,
    })
}

/// Prepends `k` blanks to a stream.
pub fn apply_delay(stream: &TokenStream, k: usize) -> TokenStream {
    let mut tokens = vec![stream.blank_id(); k];
    tokens.extend_from_slice(stream.tokens());
    TokenStream::from_parts(stream.kind(), tokens, stream.blank_id())
}

/// Pads `stream` at its end to `len` tokens.
pub(crate) fn pad_to(stream: &TokenStream, len: usize) -> TokenStream {
    padded(stream, len)
}
