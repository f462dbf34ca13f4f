//! Conversation sessions and the four-step round.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{AudioFrame, Backends, ModelInput, RequestId, Step, VadDecision};
use crate::domain::{TokenStream, Vocab};
use crate::error::{Error, Result};
use crate::frames::TOKEN_PERIOD_MS;
use crate::stream::{run_stream, ChunkEmission, FrameSink, NullSink, StreamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Listening,
    Committed,
    Tokenizing,
    Generating,
    Streaming,
    Idle,
    Failed,
}

impl SessionState {
    /// States that belong to a round in progress.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            SessionState::Committed | SessionState::Tokenizing | SessionState::Generating | SessionState::Streaming
        )
    }

    pub fn can_transition(self, to: SessionState) -> bool {
        use SessionState::*;
        match (self, to) {
            (Listening, Committed)
            | (Committed, Tokenizing)
            | (Tokenizing, Generating)
            | (Generating, Streaming)
            | (Streaming, Idle)
            | (Idle, Listening)
            | (Failed, Listening) => true,
            // a turn that tokenizes to nothing is dropped
            (Tokenizing, Listening) => true,
            (from, Failed) => from.is_active(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    /// Duration of one audio frame handed to the VAD.
    pub frame_ms: u64,
    /// Buffered speech after which the turn is committed regardless of VAD.
    pub vad_timeout_s: f64,
    /// Reject rounds that would grow the history past this many tokens.
    pub max_history_tokens: Option<usize>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            frame_ms: TOKEN_PERIOD_MS,
            vad_timeout_s: 60.0,
            max_history_tokens: None,
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_ms == 0 {
            return Err(Error::config("frame_ms must be positive"));
        }
        if !(self.vad_timeout_s.is_finite() && self.vad_timeout_s > 0.0) {
            return Err(Error::config("vad_timeout_s must be positive"));
        }
        Ok(())
    }

    fn vad_timeout_ms(&self) -> u64 {
        (self.vad_timeout_s * 1000.0).round() as u64
    }
}

/// The server's signal that the user's turn is over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSignal {
    pub at_ms: u64,
    pub frames: usize,
    /// Committed because the turn hit the VAD timeout.
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub commit: CommitSignal,
    pub history_before: usize,
    pub input_tokens: usize,
    pub output_text: Vec<u32>,
    pub output_audio: Vec<u32>,
    pub history_after: usize,
    pub retained_frames: usize,
    pub first_chunk_delay_s: f64,
    pub chunks: Vec<ChunkEmission>,
    pub frame_checksum: String,
}

impl RoundRecord {
    pub fn output_tokens(&self) -> usize {
        self.output_text.len() + self.output_audio.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncidentKind {
    /// The committed turn held no audio tokens.
    Rejected,
    Failed { step: Option<Step>, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub round: usize,
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: IncidentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedOutcome {
    Buffering,
    Committed(CommitSignal),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    Completed(RoundRecord),
    Rejected,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub(crate) id: String,
    pub(crate) state: SessionState,
    pub(crate) history: Vec<u32>,
    pub(crate) system_prompt_len: usize,
    pub(crate) ledger: Vec<RoundRecord>,
    pub(crate) incidents: Vec<Incident>,
    pub(crate) clock_ms: u64,
    pub(crate) next_round: usize,
    pub(crate) config_hash: String,
    buffer: Vec<u8>,
    buffered_frames: usize,
    pending_commit: Option<CommitSignal>,
    trace: Vec<SessionState>,
}

pub(crate) fn check_session_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::contract(format!("session id {id:?} must be non-empty [A-Za-z0-9_-]")));
    }
    Ok(())
}

impl Session {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore(
        id: String,
        state: SessionState,
        history: Vec<u32>,
        system_prompt_len: usize,
        ledger: Vec<RoundRecord>,
        incidents: Vec<Incident>,
        clock_ms: u64,
        next_round: usize,
        config_hash: String,
    ) -> Self {
        Self {
            id,
            state,
            history,
            system_prompt_len,
            ledger,
            incidents,
            clock_ms,
            next_round,
            config_hash,
            buffer: Vec::new(),
            buffered_frames: 0,
            pending_commit: None,
            trace: vec![state],
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// System prompt followed by every completed round's input and output tokens.
    pub fn history(&self) -> &[u32] {
        &self.history
    }

    pub fn system_prompt_len(&self) -> usize {
        self.system_prompt_len
    }

    pub fn ledger(&self) -> &[RoundRecord] {
        &self.ledger
    }

    pub fn incidents(&self) -> &[Incident] {
        &self.incidents
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// States visited since the session was opened or loaded.
    pub fn trace(&self) -> &[SessionState] {
        &self.trace
    }

    fn transition(&mut self, to: SessionState) -> Result<()> {
        if !self.state.can_transition(to) {
            return Err(Error::State(format!(
                "session {}: illegal transition {:?} -> {:?}",
                self.id, self.state, to
            )));
        }
        self.state = to;
        self.trace.push(to);
        Ok(())
    }

    /// Starts listening for the next turn after a completed round.
    pub fn listen(&mut self) -> Result<()> {
        if self.state != SessionState::Idle {
            return Err(Error::State(format!("session {} cannot listen from {:?}", self.id, self.state)));
        }
        self.transition(SessionState::Listening)
    }

    /// Leaves the failed state. History was already rolled back.
    pub fn recover(&mut self) -> Result<()> {
        if self.state != SessionState::Failed {
            return Err(Error::State(format!("session {} is not failed", self.id)));
        }
        self.transition(SessionState::Listening)
    }
}

/// Drives sessions through rounds against a fixed set of backends.
/// Shared by reference across threads; each session is driven by one caller at a time.
pub struct Orchestrator<'a> {
    cfg: OrchestratorConfig,
    stream: StreamConfig,
    audio_blank: u32,
    backends: Backends<'a>,
    config_hash: String,
}

impl<'a> Orchestrator<'a> {
    pub fn new(cfg: OrchestratorConfig, stream: StreamConfig, backends: Backends<'a>) -> Result<Self> {
        cfg.validate()?;
        stream.validate()?;
        let mut orch = Self {
            cfg,
            stream,
            audio_blank: Vocab::default().audio_blank,
            backends,
            config_hash: String::new(),
        };
        orch.config_hash = orch.own_hash()?;
        Ok(orch)
    }

    fn own_hash(&self) -> Result<String> {
        let doc = serde_json::to_vec(&(&self.cfg, &self.stream, self.audio_blank))?;
        Ok(hex::encode(Sha256::digest(&doc)))
    }

    /// Generated audio ids must stay below `blank`.
    pub fn with_audio_blank(mut self, blank: u32) -> Result<Self> {
        self.audio_blank = blank;
        self.config_hash = self.own_hash()?;
        Ok(self)
    }

    /// Stamps sessions with an externally computed configuration hash.
    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = hash.into();
        self
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn open(&self, id: impl Into<String>, system_prompt: Vec<u32>) -> Result<Session> {
        let id = id.into();
        check_session_id(&id)?;
        let len = system_prompt.len();
        Ok(Session::restore(
            id,
            SessionState::Listening,
            system_prompt,
            len,
            Vec::new(),
            Vec::new(),
            0,
            0,
            self.config_hash.clone(),
        ))
    }

    /// Buffers one frame of user audio and commits the turn on end of speech
    /// or when the buffered audio reaches the VAD timeout.
    pub fn feed_audio(&self, session: &mut Session, frame: AudioFrame) -> Result<FeedOutcome> {
        if session.state != SessionState::Listening {
            return Err(Error::State(format!(
                "session {} received audio while {:?}",
                session.id, session.state
            )));
        }
        let decision = self.backends.vad.detect(&frame)?;
        session.buffer.extend_from_slice(&frame.bytes);
        session.buffered_frames += 1;
        session.clock_ms += self.cfg.frame_ms;
        let timed_out = session.buffered_frames as u64 * self.cfg.frame_ms >= self.cfg.vad_timeout_ms();
        if decision == VadDecision::Speech && !timed_out {
            return Ok(FeedOutcome::Buffering);
        }
        let signal = CommitSignal {
            at_ms: session.clock_ms,
            frames: session.buffered_frames,
            timed_out: decision == VadDecision::Speech,
        };
        session.pending_commit = Some(signal.clone());
        session.transition(SessionState::Committed)?;
        Ok(FeedOutcome::Committed(signal))
    }

    pub fn run_round(&self, session: &mut Session) -> Result<RoundOutcome> {
        self.run_round_into(session, &mut NullSink)
    }

    /// Tokenize, build the model input, generate, detokenize. Emitted frames go
    /// to `sink`. On failure the session is left `Failed` with its history as
    /// it was before the round.
    pub fn run_round_into(&self, session: &mut Session, sink: &mut dyn FrameSink) -> Result<RoundOutcome> {
        if session.state != SessionState::Committed {
            return Err(Error::State(format!(
                "session {} cannot run a round while {:?}",
                session.id, session.state
            )));
        }
        let round = session.next_round;
        session.next_round += 1;
        let commit = session.pending_commit.take().expect("committed sessions hold a commit signal");
        let audio = std::mem::take(&mut session.buffer);
        session.buffered_frames = 0;
        let history_before = session.history.len();

        match self.round_steps(session, round, commit, &audio, sink) {
            Ok(outcome) => Ok(outcome),
            Err((step, error)) => {
                session.history.truncate(history_before);
                session.incidents.push(Incident {
                    round,
                    at_ms: session.clock_ms,
                    kind: IncidentKind::Failed { step, message: error.to_string() },
                });
                session.transition(SessionState::Failed)?;
                Err(error)
            }
        }
    }

    fn round_steps(
        &self,
        session: &mut Session,
        round: usize,
        commit: CommitSignal,
        audio: &[u8],
        sink: &mut dyn FrameSink,
    ) -> std::result::Result<RoundOutcome, (Option<Step>, Error)> {
        let sid = session.id.clone();
        let request = |step| RequestId { session: sid.clone(), round, step };
        let at = |step: Step| move |e: Error| (Some(step), e);

        let req = request(Step::Tokenize);
        session.transition(SessionState::Tokenizing).map_err(|e| (None, e))?;
        self.backends.faults.check(&req).map_err(at(Step::Tokenize))?;
        let tokenized = self.backends.tokenizer.tokenize(&req, audio).map_err(at(Step::Tokenize))?;
        if tokenized.tokens.is_empty() {
            session.incidents.push(Incident { round, at_ms: session.clock_ms, kind: IncidentKind::Rejected });
            session.transition(SessionState::Listening).map_err(|e| (None, e))?;
            return Ok(RoundOutcome::Rejected);
        }
        let new_tokens = tokenized.tokens.tokens();

        let req = request(Step::Generate);
        session.transition(SessionState::Generating).map_err(|e| (None, e))?;
        let mut input = Vec::with_capacity(session.history.len() + new_tokens.len());
        input.extend_from_slice(&session.history);
        input.extend_from_slice(new_tokens);
        let input = ModelInput { tokens: input, history_len: session.history.len() };
        self.backends.faults.check(&req).map_err(at(Step::Generate))?;
        let output = self.backends.llm.generate(&req, &input).map_err(at(Step::Generate))?;
        let history_after = input.tokens.len() + output.text.len() + output.audio.len();
        if let Some(cap) = self.cfg.max_history_tokens {
            if history_after > cap {
                return Err((
                    Some(Step::Generate),
                    Error::State(format!("history would reach {history_after} tokens, cap is {cap}")),
                ));
            }
        }

        let req = request(Step::Detokenize);
        session.transition(SessionState::Streaming).map_err(|e| (None, e))?;
        let speech = TokenStream::semantic(output.audio.clone(), self.audio_blank).map_err(at(Step::Generate))?;
        self.backends.faults.check(&req).map_err(at(Step::Detokenize))?;
        let report = run_stream(&speech, &self.stream, self.backends.decoder, sink)
            .map_err(|abort| (Some(Step::Detokenize), Error::from(abort)))?;

        let history_before = session.history.len();
        let input_tokens = new_tokens.len();
        session.history.extend_from_slice(input.new_tokens());
        session.history.extend_from_slice(&output.text);
        session.history.extend_from_slice(&output.audio);
        debug_assert_eq!(session.history.len(), history_after);
        let last_emit = report.chunks.last().map_or(0, |c| c.emitted_at_tokens);
        session.clock_ms += last_emit as u64 * TOKEN_PERIOD_MS;
        let record = RoundRecord {
            round,
            commit,
            history_before,
            input_tokens,
            output_text: output.text,
            output_audio: output.audio,
            history_after,
            retained_frames: report.retained_frames,
            first_chunk_delay_s: report.first_chunk_delay_s,
            chunks: report.chunks,
            frame_checksum: report.checksum,
        };
        session.ledger.push(record.clone());
        session.transition(SessionState::Idle).map_err(|e| (None, e))?;
        Ok(RoundOutcome::Completed(record))
    }
}
