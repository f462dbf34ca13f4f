//! Shared domain types: time spans at millisecond resolution, speaker
//! embeddings, diarized segments and discrete token streams.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotate::EnhancementChoice;
use crate::error::{Error, Result};
use crate::frames::SEMANTIC_RATE_HZ;

/// Opaque cluster label produced by diarization.
pub type SpeakerId = u32;

/// Default speaker-embedding dimension.
pub const DEFAULT_EMBEDDING_DIM: usize = 256;

/// Blank ids of the two vocabularies. Each blank is one past the largest
/// ordinary token id of its vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vocab {
    pub audio_blank: u32,
    /// Text is tokenized byte-wise, so ids 0..=255 are ordinary tokens.
    pub text_blank: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            audio_blank: 4096,
            text_blank: 256,
        }
    }
}

impl Vocab {
    pub fn validate(&self) -> Result<()> {
        if self.audio_blank == 0 || self.text_blank < 256 {
            return Err(Error::config(format!(
                "vocab blanks {self:?}: audio needs at least one id, text needs all 256 byte ids"
            )));
        }
        Ok(())
    }
}

/// Half-open time interval `[start, end)` stored in integer milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawSpan")]
pub struct TimeSpan {
    start_ms: u64,
    end_ms: u64,
}

#[derive(Deserialize)]
struct RawSpan {
    start_ms: u64,
    end_ms: u64,
}

impl TryFrom<RawSpan> for TimeSpan {
    type Error = Error;

    fn try_from(raw: RawSpan) -> Result<Self> {
        TimeSpan::from_millis(raw.start_ms, raw.end_ms)
    }
}

impl TimeSpan {
    pub fn from_millis(start_ms: u64, end_ms: u64) -> Result<Self> {
        if end_ms <= start_ms {
            return Err(Error::contract(format!(
                "time span end ({end_ms} ms) must be after start ({start_ms} ms)"
            )));
        }
        Ok(Self { start_ms, end_ms })
    }

    /// Builds a span from seconds, rounding both bounds to the nearest millisecond.
    pub fn from_secs(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 {
            return Err(Error::contract(format!(
                "time span bounds must be finite and non-negative, got {start}..{end}"
            )));
        }
        Self::from_millis(secs_to_ms(start), secs_to_ms(end))
    }

    pub fn start_ms(&self) -> u64 {
        self.start_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.end_ms
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn start_secs(&self) -> f64 {
        self.start_ms as f64 / 1000.0
    }

    pub fn end_secs(&self) -> f64 {
        self.end_ms as f64 / 1000.0
    }

    pub fn duration_secs(&self) -> f64 {
        self.duration_ms() as f64 / 1000.0
    }

    /// Overlap with `other` in milliseconds (0 when disjoint).
    pub fn overlap_ms(&self, other: &TimeSpan) -> u64 {
        let lo = self.start_ms.max(other.start_ms);
        let hi = self.end_ms.min(other.end_ms);
        hi.saturating_sub(lo)
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s-{:.3}s", self.start_secs(), self.end_secs())
    }
}

pub(crate) fn secs_to_ms(secs: f64) -> u64 {
    (secs * 1000.0).round() as u64
}

/// A speaker embedding with its Euclidean norm cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

impl Embedding {
    /// Rejects empty, non-finite and zero vectors.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("embedding must have at least one dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("embedding contains a non-finite value"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::contract("zero embedding vector has no direction"));
        }
        Ok(Self { values, norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// The same direction scaled to unit length.
    pub fn normalized(&self) -> Embedding {
        let values: Vec<f64> = self.values.iter().map(|v| v / self.norm).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Embedding { values, norm }
    }

    /// Normalized sum of `weight * unit(e)` over the inputs.
    pub fn weighted_mean_direction<'a>(
        items: impl IntoIterator<Item = (&'a Embedding, f64)>,
    ) -> Result<Embedding> {
        let mut acc: Option<Vec<f64>> = None;
        for (emb, weight) in items {
            let sum = acc.get_or_insert_with(|| vec![0.0; emb.dim()]);
            if sum.len() != emb.dim() {
                return Err(dim_mismatch(sum.len(), emb.dim()));
            }
            for (s, v) in sum.iter_mut().zip(&emb.values) {
                *s += weight * v / emb.norm;
            }
        }
        let sum = acc.ok_or_else(|| Error::contract("mean of zero embeddings"))?;
        Embedding::new(sum).map(|e| e.normalized())
    }
}

fn dim_mismatch(a: usize, b: usize) -> Error {
    Error::contract(format!("embedding dimension mismatch: {a} vs {b}"))
}

/// Cosine of the angle between two embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_mismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Spoken-language tag attached by language identification.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Language {
    En,
    Zh,
    Other(String),
}

impl From<String> for Language {
    fn from(tag: String) -> Self {
        match tag.as_str() {
            "en" => Language::En,
            "zh" => Language::Zh,
            _ => Language::Other(tag),
        }
    }
}

impl From<&str> for Language {
    fn from(tag: &str) -> Self {
        Language::from(tag.to_owned())
    }
}

impl From<Language> for String {
    fn from(lang: Language) -> Self {
        lang.as_str().to_owned()
    }
}

impl Language {
    pub fn as_str(&self) -> &str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
            Language::Other(tag) => tag,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One speaker turn of an audio asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub span: TimeSpan,
    pub speaker: SpeakerId,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<Language>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhancement: Option<EnhancementChoice>,
}

impl Segment {
    pub fn new(source: impl Into<String>, span: TimeSpan, speaker: SpeakerId) -> Self {
        Self {
            span,
            speaker,
            source: source.into(),
            transcript: None,
            language: None,
            enhancement: None,
        }
    }

    /// Copy of this segment's labels over a different span; annotations are dropped
    /// because they described the old audio.
    pub fn with_span(&self, span: TimeSpan, speaker: SpeakerId) -> Self {
        Segment::new(self.source.clone(), span, speaker)
    }
}

/// Checks that segments are sorted by start and pairwise non-overlapping.
pub fn check_sorted_disjoint(segments: &[Segment]) -> Result<()> {
    for pair in segments.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.source != b.source {
            continue;
        }
        if b.span.start_ms() < a.span.end_ms() {
            return Err(Error::contract(format!(
                "segments of `{}` overlap or are unsorted: {} then {}",
                a.source, a.span, b.span
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    SemanticAudio,
    Text,
}

/// A sequence of discrete token ids with its vocabulary's reserved blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    kind: StreamKind,
    tokens: Vec<u32>,
    blank_id: u32,
}

impl TokenStream {
    /// Raw semantic-audio tokens at 12.5 Hz; the blank id may not occur.
    pub fn semantic(tokens: Vec<u32>, blank_id: u32) -> Result<Self> {
        Self::raw(StreamKind::SemanticAudio, tokens, blank_id)
    }

    /// Raw text tokens; the blank id may not occur.
    pub fn text(tokens: Vec<u32>, blank_id: u32) -> Result<Self> {
        Self::raw(StreamKind::Text, tokens, blank_id)
    }

    pub fn raw(kind: StreamKind, tokens: Vec<u32>, blank_id: u32) -> Result<Self> {
        if let Some(pos) = tokens.iter().position(|&t| t == blank_id) {
            return Err(Error::contract(format!(
                "blank id {blank_id} appears in a raw {kind:?} stream at position {pos}"
            )));
        }
        Ok(Self {
            kind,
            tokens,
            blank_id,
        })
    }

    /// Stream that may already contain blanks (aligned or delayed output).
    pub(crate) fn from_parts(kind: StreamKind, tokens: Vec<u32>, blank_id: u32) -> Self {
        Self {
            kind,
            tokens,
            blank_id,
        }
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    /// Frame rate in Hz; text streams have none.
    pub fn rate_hz(&self) -> Option<f64> {
        match self.kind {
            StreamKind::SemanticAudio => Some(SEMANTIC_RATE_HZ),
            StreamKind::Text => None,
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn blank_id(&self) -> u32 {
        self.blank_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_tokens(self) -> Vec<u32> {
        self.tokens
    }
}

/// Reference to the continuous acoustic features of an asset, one vector per
/// semantic token. The vectors themselves live with the tokenizer backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHandle {
    pub asset: String,
    pub frames: usize,
}

impl FeatureHandle {
    /// Pairs a handle with the semantic stream it describes.
    pub fn for_stream(asset: impl Into<String>, stream: &TokenStream) -> Result<Self> {
        if stream.kind() != StreamKind::SemanticAudio {
            return Err(Error::contract("feature handles pair with semantic audio streams"));
        }
        Ok(Self {
            asset: asset.into(),
            frames: stream.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        // dot = 18 + 32 = 50, norms 5 and 10
        let s = cosine_similarity(&emb(&[3.0, 4.0]), &emb(&[6.0, 8.0])).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        let err = cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_and_empty_embeddings_rejected() {
        assert!(Embedding::new(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn span_validation_and_rounding() {
        assert!(TimeSpan::from_millis(5, 5).is_err());
        assert!(TimeSpan::from_secs(-1.0, 2.0).is_err());
        let s = TimeSpan::from_secs(0.1, 0.3).unwrap();
        assert_eq!(s.duration_ms(), 200);
        let parsed: std::result::Result<TimeSpan, _> =
            serde_json::from_str(r#"{"start_ms":10,"end_ms":3}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn raw_streams_reject_blank() {
        assert!(TokenStream::semantic(vec![1, 2, 9], 9).is_err());
        let s = TokenStream::semantic(vec![1, 2], 9).unwrap();
        assert_eq!(s.rate_hz(), Some(12.5));
        assert_eq!(TokenStream::text(vec![1], 9).unwrap().rate_hz(), None);
    }

    #[test]
    fn language_tags_round_trip() {
        for tag in ["en", "zh", "fr"] {
            let lang = Language::from(tag);
            let json = serde_json::to_string(&lang).unwrap();
            assert_eq!(json, format!("\"{tag}\""));
            assert_eq!(serde_json::from_str::<Language>(&json).unwrap(), lang);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..8).prop_flat_map(|d| {
                (
                    prop::collection::vec(-10.0f64..10.0, d),
                    prop::collection::vec(-10.0f64..10.0, d),
                )
            })
        }

        proptest! {
            #[test]
            fn symmetric_and_scale_invariant((a, b) in vec_pair(), k in 0.01f64..100.0) {
                let (Ok(ea), Ok(eb)) = (Embedding::new(a.clone()), Embedding::new(b)) else {
                    return Ok(());
                };
                let ab = cosine_similarity(&ea, &eb).unwrap();
                let ba = cosine_similarity(&eb, &ea).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!((-1.0..=1.0).contains(&ab));
                let scaled = Embedding::new(a.iter().map(|v| v * k).collect()).unwrap();
                let kab = cosine_similarity(&scaled, &eb).unwrap();
                prop_assert!((kab - ab).abs() <= 1e-9 * ab.abs().max(1.0));
            }
        }
    }
}
