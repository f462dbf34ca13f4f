//! Scripted conversations for the simulator.
//!
//! A script is line-delimited JSON; blank lines and lines starting with `#`
//! are skipped.
//!
//! ```text
//! {"op":"open","session":"a","system_prompt":[1,2,3]}
//! {"op":"round","session":"a","input":[10,11,12]}
//! {"op":"fault","session":"a","round":1,"step":"generate"}
//! ```
//!
//! Each `round` feeds one audio frame per input token followed by a silent
//! frame, then runs the round. A `fault` makes the given round attempt of the
//! session fail at the given step. Sessions run concurrently; ops of one
//! session run in script order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::backend::{AudioFrame, FaultPlan, Step, Store, WordTokenizer};
use super::persist::persist_history;
use super::session::{check_session_id, FeedOutcome, Incident, Orchestrator, RoundRecord, SessionState};
use crate::error::{Error, Result};
use crate::parallel::ordered_map;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptOp {
    Open {
        session: String,
        #[serde(default)]
        system_prompt: Vec<u32>,
    },
    Round {
        session: String,
        input: Vec<u32>,
    },
    Fault {
        session: String,
        round: usize,
        step: Step,
    },
}

impl ScriptOp {
    pub fn session(&self) -> &str {
        match self {
            ScriptOp::Open { session, .. } | ScriptOp::Round { session, .. } | ScriptOp::Fault { session, .. } => session,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptLine {
    pub line: usize,
    pub op: ScriptOp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub lines: Vec<ScriptLine>,
}

impl Script {
    /// Parses and checks that every session is opened once, before use.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        let mut open = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let op: ScriptOp =
                serde_json::from_str(raw).map_err(|e| Error::contract(format!("script line {line}: {e}")))?;
            match &op {
                ScriptOp::Open { session, .. } => {
                    check_session_id(session).map_err(|e| Error::contract(format!("script line {line}: {e}")))?;
                    if !open.insert(session.clone()) {
                        return Err(Error::contract(format!("script line {line}: session {session} opened twice")));
                    }
                }
                other if !open.contains(other.session()) => {
                    return Err(Error::contract(format!(
                        "script line {line}: unknown session {}",
                        other.session()
                    )));
                }
                _ => {}
            }
            lines.push(ScriptLine { line, op });
        }
        Ok(Self { lines })
    }

    pub fn faults(&self) -> FaultPlan {
        let mut plan = FaultPlan::new();
        for l in &self.lines {
            if let ScriptOp::Fault { session, round, step } = &l.op {
                plan.inject(session.clone(), *round, *step);
            }
        }
        plan
    }

    fn by_session(&self) -> BTreeMap<&str, Vec<&ScriptLine>> {
        let mut out: BTreeMap<&str, Vec<&ScriptLine>> = BTreeMap::new();
        for l in &self.lines {
            out.entry(l.op.session()).or_default().push(l);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub state: SessionState,
    pub history_len: usize,
    pub history: Vec<u32>,
    pub rounds: Vec<RoundRecord>,
    pub incidents: Vec<Incident>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationLedger {
    pub config_hash: String,
    pub sessions: Vec<SessionSummary>,
}

fn run_session(
    orch: &Orchestrator<'_>,
    lines: &[&ScriptLine],
    store: Option<&dyn Store>,
) -> Result<SessionSummary> {
    let ScriptOp::Open { session: id, system_prompt } = &lines[0].op else {
        unreachable!("parse puts open first");
    };
    let mut s = orch.open(id.clone(), system_prompt.clone())?;
    for l in &lines[1..] {
        let ScriptOp::Round { input, .. } = &l.op else { continue };
        let mut committed = false;
        for &t in input {
            if let FeedOutcome::Committed(_) = orch.feed_audio(&mut s, AudioFrame::new(WordTokenizer::encode(&[t])))? {
                committed = true;
                break;
            }
        }
        if !committed {
            orch.feed_audio(&mut s, AudioFrame::silence())?;
        }
        match orch.run_round(&mut s) {
            Ok(_) => {
                if s.state() == SessionState::Idle {
                    s.listen()?;
                }
            }
            Err(_) if s.state() == SessionState::Failed => s.recover()?,
            Err(e) => return Err(Error::contract(format!("script line {}: {e}", l.line))),
        }
    }
    if let Some(store) = store {
        persist_history(&s, store)?;
    }
    Ok(SessionSummary {
        session: s.id().to_owned(),
        state: s.state(),
        history_len: s.history().len(),
        history: s.history().to_vec(),
        rounds: s.ledger().to_vec(),
        incidents: s.incidents().to_vec(),
    })
}

/// Runs every session of `script` on up to `workers` threads. The ledger is
/// ordered by session id and does not depend on `workers`.
pub fn run_script(
    orch: &Orchestrator<'_>,
    script: &Script,
    workers: usize,
    store: Option<&dyn Store>,
) -> Result<ConversationLedger> {
    let groups: Vec<(&str, Vec<&ScriptLine>)> = script.by_session().into_iter().collect();
    let sessions = ordered_map(&groups, workers, |(_, l)| run_session(orch, l, store))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ConversationLedger { config_hash: orch.config_hash().to_owned(), sessions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::backend::{Backends, EchoLlm, EmptyFrameVad};
    use crate::orchestrator::session::OrchestratorConfig;
    use crate::stream::{HashMelDecoder, StreamConfig};

    const SCRIPT: &str = r#"
# two sessions
{"op":"open","session":"b","system_prompt":[1]}
{"op":"open","session":"a","system_prompt":[2,3]}
{"op":"round","session":"a","input":[10,11,12]}
{"op":"round","session":"b","input":[20]}
{"op":"round","session":"a","input":[13,14]}
{"op":"fault","session":"b","round":1,"step":"detokenize"}
{"op":"round","session":"b","input":[21,22]}
"#;

    fn ledger(script: &Script, workers: usize) -> ConversationLedger {
        let vad = EmptyFrameVad;
        let tok = WordTokenizer { audio_vocab: 4096 };
        let llm = EchoLlm { reply_text: vec![5] };
        let dec = HashMelDecoder::new(2);
        let b = Backends { vad: &vad, tokenizer: &tok, llm: &llm, decoder: &dec, faults: script.faults() };
        let o = Orchestrator::new(OrchestratorConfig::default(), StreamConfig::default(), b).unwrap();
        run_script(&o, script, workers, None).unwrap()
    }

    #[test]
    fn two_round_session_and_fault() {
        let script = Script::parse(SCRIPT).unwrap();
        let l = ledger(&script, 1);
        assert_eq!(l.sessions.iter().map(|s| s.session.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let a = &l.sessions[0];
        assert_eq!(a.rounds.len(), 2);
        assert_eq!(a.history_len, 2 + (3 + 1 + 3) + (2 + 1 + 2));
        let b = &l.sessions[1];
        assert_eq!(b.rounds.len(), 1);
        assert_eq!(b.history_len, 1 + 3);
        assert_eq!(b.state, SessionState::Listening);
        assert!(matches!(b.incidents[0].kind, crate::orchestrator::session::IncidentKind::Failed { .. }));
    }

    #[test]
    fn workers_do_not_change_the_ledger() {
        let script = Script::parse(SCRIPT).unwrap();
        let serial = serde_json::to_string(&ledger(&script, 1)).unwrap();
        assert_eq!(serial, serde_json::to_string(&ledger(&script, 4)).unwrap());
    }

    #[test]
    fn unknown_session_names_line() {
        let err = Script::parse("{\"op\":\"open\",\"session\":\"a\"}\n{\"op\":\"round\",\"session\":\"z\",\"input\":[]}")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn empty_script_empty_ledger() {
        let script = Script::parse("").unwrap();
        assert!(ledger(&script, 2).sessions.is_empty());
    }
}
