//! Speech-to-speech conversation rounds over tokenizer, language model and
//! detokenizer services, with token-level history kept in a store.

mod backend;
mod persist;
mod script;
mod session;

pub use backend::{
    AudioFrame, Backends, CountingVad, DualOutput, EchoLlm, EmptyFrameVad, FaultPlan, FileStore, LanguageModel,
    MemoryStore, ModelInput, RequestId, Step, Store, TokenizedAudio, Tokenizer, VadDecision,
    VoiceActivityDetector, WordTokenizer,
};
pub use persist::{decode_session, encode_session, load_history, persist_history, session_key};
pub use script::{run_script, ConversationLedger, Script, ScriptLine, ScriptOp, SessionSummary};
pub use session::{
    CommitSignal, FeedOutcome, Incident, IncidentKind, Orchestrator, OrchestratorConfig, RoundOutcome,
    RoundRecord, Session, SessionState,
};
