//! Service contracts used by a conversation round, and deterministic mocks.
//!
//! Every call carries a [`RequestId`]. Implementations must return the same
//! response for the same id and input, so a retried call is harmless.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::{FeatureHandle, TokenStream};
use crate::error::{Error, Result};
use crate::stream::MelDecoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Tokenize,
    Generate,
    Detokenize,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Tokenize => "tokenize",
            Step::Generate => "generate",
            Step::Detokenize => "detokenize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestId {
    pub session: String,
    pub round: usize,
    pub step: Step,
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.session, self.round, self.step.name())
    }
}

/// One frame of user audio as delivered by the client.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AudioFrame {
    pub bytes: Vec<u8>,
}

impl AudioFrame {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn silence() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VadDecision {
    Speech,
    EndOfSpeech,
}

pub trait VoiceActivityDetector: Send + Sync {
    fn detect(&self, frame: &AudioFrame) -> Result<VadDecision>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedAudio {
    pub tokens: TokenStream,
    pub features: FeatureHandle,
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, request: &RequestId, audio: &[u8]) -> Result<TokenizedAudio>;
}

/// Input to the language model: the stored history followed by the new turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub tokens: Vec<u32>,
    /// Length of the history prefix inside `tokens`.
    pub history_len: usize,
}

impl ModelInput {
    pub fn new_tokens(&self) -> &[u32] {
        &self.tokens[self.history_len..]
    }
}

/// Parallel outputs of the text head and the audio head.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DualOutput {
    pub text: Vec<u32>,
    pub audio: Vec<u32>,
}

pub trait LanguageModel: Send + Sync {
    fn generate(&self, request: &RequestId, input: &ModelInput) -> Result<DualOutput>;
}

/// Byte store keyed by string.
pub trait Store: Send + Sync {
    fn put(&self, key: &str, bytes: &[u8]) -> Result<()>;
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>>;
}

/// Speech until an empty frame arrives.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyFrameVad;

impl VoiceActivityDetector for EmptyFrameVad {
    fn detect(&self, frame: &AudioFrame) -> Result<VadDecision> {
        Ok(if frame.bytes.is_empty() {
            VadDecision::EndOfSpeech
        } else {
            VadDecision::Speech
        })
    }
}

/// Fires on the n-th frame it sees (1-based), counting across calls.
#[derive(Debug)]
pub struct CountingVad {
    fire_at: Option<usize>,
    seen: Mutex<usize>,
}

impl CountingVad {
    pub fn new(fire_at: Option<usize>) -> Self {
        Self { fire_at, seen: Mutex::new(0) }
    }
}

impl VoiceActivityDetector for CountingVad {
    fn detect(&self, _frame: &AudioFrame) -> Result<VadDecision> {
        let mut seen = self.seen.lock().expect("vad counter poisoned");
        *seen += 1;
        Ok(if Some(*seen) == self.fire_at {
            VadDecision::EndOfSpeech
        } else {
            VadDecision::Speech
        })
    }
}

/// Reads little-endian `u32` token ids straight out of the audio bytes,
/// reduced modulo the vocabulary. A trailing partial word is ignored.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    pub audio_vocab: u32,
}

impl WordTokenizer {
    /// Audio bytes that this tokenizer maps back to `tokens`.
    pub fn encode(tokens: &[u32]) -> Vec<u8> {
        tokens.iter().flat_map(|t| t.to_le_bytes()).collect()
    }
}

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, request: &RequestId, audio: &[u8]) -> Result<TokenizedAudio> {
        let ids = audio
            .chunks_exact(4)
            .map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]) % self.audio_vocab)
            .collect();
        let tokens = TokenStream::semantic(ids, self.audio_vocab)?;
        let features = FeatureHandle::for_stream(request.to_string(), &tokens)?;
        Ok(TokenizedAudio { tokens, features })
    }
}

/// Speaks back what it heard and answers with a fixed text.
#[derive(Debug, Clone)]
pub struct EchoLlm {
    pub reply_text: Vec<u32>,
}

impl LanguageModel for EchoLlm {
    fn generate(&self, _request: &RequestId, input: &ModelInput) -> Result<DualOutput> {
        Ok(DualOutput {
            text: self.reply_text.clone(),
            audio: input.new_tokens().to_vec(),
        })
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    entries: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn put(&self, key: &str, bytes: &[u8]) -> Result<()> {
        self.entries.lock().expect("store poisoned").insert(key.to_owned(), bytes.to_vec());
        Ok(())
    }

    fn get(&self, key: &str) -> Result<Option<Vec<u8>>> {
        Ok(self.entries.lock().expect("store poisoned").get(key).cloned())
    }
}

/// One file per key under a directory; writes go through a rename.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path_for(&self, key: &str) -> Result<PathBuf> {
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || key.starts_with('.') {
            return Err(Error::contract(format!("store key {key:?} is not a plain file name")));
        }
        Ok(self.root.join(key))
    }
}

impl Store for FileStore {
    fn put(&self, key: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path_for(key)?;
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn get(&self, key: &str) -> Result<Option<Vec<u8>>> {
        match fs::read(self.path_for(key)?) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Requests that fail with an injected backend error.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    faults: BTreeSet<RequestId>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inject(&mut self, session: impl Into<String>, round: usize, step: Step) {
        self.faults.insert(RequestId { session: session.into(), round, step });
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub(crate) fn check(&self, request: &RequestId) -> Result<()> {
        if self.faults.contains(request) {
            Err(Error::backend(request.step.name(), format!("injected fault for {request}")))
        } else {
            Ok(())
        }
    }
}

/// The services a round talks to.
pub struct Backends<'a> {
    pub vad: &'a dyn VoiceActivityDetector,
    pub tokenizer: &'a dyn Tokenizer,
    pub llm: &'a dyn LanguageModel,
    pub decoder: &'a dyn MelDecoder,
    pub faults: FaultPlan,
}
