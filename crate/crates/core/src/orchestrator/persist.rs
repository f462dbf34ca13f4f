//! Session history stored as a `KAFSEQ1` container with a session payload.
//!
//! Records, in order: session metadata (JSON), history tokens (`u32` LE),
//! round ledger (JSON), incidents (JSON). Audio buffered for an uncommitted
//! turn is not stored.

use serde::{Deserialize, Serialize};

use super::backend::Store;
use super::session::{check_session_id, Incident, RoundRecord, Session, SessionState};
use crate::error::{Error, Result};
use crate::sequencer::container::{read_container, write_container, ContainerHeader, PayloadKind};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionMeta {
    id: String,
    state: SessionState,
    system_prompt_len: usize,
    clock_ms: u64,
    next_round: usize,
}

pub fn session_key(id: &str) -> String {
    format!("session-{id}.kafseq")
}

pub fn encode_session(session: &Session) -> Result<Vec<u8>> {
    if session.state.is_active() {
        return Err(Error::State(format!(
            "session {} cannot be persisted mid-round ({:?})",
            session.id, session.state
        )));
    }
    let meta = SessionMeta {
        id: session.id.clone(),
        state: session.state,
        system_prompt_len: session.system_prompt_len,
        clock_ms: session.clock_ms,
        next_round: session.next_round,
    };
    let records = vec![
        serde_json::to_vec(&meta)?,
        session.history.iter().flat_map(|t| t.to_le_bytes()).collect(),
        serde_json::to_vec(&session.ledger)?,
        serde_json::to_vec(&session.incidents)?,
    ];
    write_container(&ContainerHeader::new(PayloadKind::Session, session.config_hash.clone()), &records)
}

pub fn decode_session(bytes: &[u8]) -> Result<Session> {
    let (header, records) = read_container(bytes)?;
    if header.payload != PayloadKind::Session {
        return Err(Error::Integrity("container does not hold a session".into()));
    }
    let [meta, history, ledger, incidents] = <[Vec<u8>; 4]>::try_from(records)
        .map_err(|r| Error::Integrity(format!("session container has {} records, expected 4", r.len())))?;
    let meta: SessionMeta =
        serde_json::from_slice(&meta).map_err(|e| Error::Integrity(format!("session metadata: {e}")))?;
    if history.len() % 4 != 0 {
        return Err(Error::Integrity("history record is not a whole number of tokens".into()));
    }
    let history: Vec<u32> = history
        .chunks_exact(4)
        .map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]))
        .collect();
    let ledger: Vec<RoundRecord> =
        serde_json::from_slice(&ledger).map_err(|e| Error::Integrity(format!("round ledger: {e}")))?;
    let incidents: Vec<Incident> =
        serde_json::from_slice(&incidents).map_err(|e| Error::Integrity(format!("incidents: {e}")))?;
    if meta.system_prompt_len > history.len() || ledger.last().is_some_and(|r| r.history_after != history.len()) {
        return Err(Error::Integrity(format!("session {} history disagrees with its ledger", meta.id)));
    }
    Ok(Session::restore(
        meta.id,
        meta.state,
        history,
        meta.system_prompt_len,
        ledger,
        incidents,
        meta.clock_ms,
        meta.next_round,
        header.config_hash,
    ))
}

pub fn persist_history(session: &Session, store: &dyn Store) -> Result<()> {
    store.put(&session_key(&session.id), &encode_session(session)?)
}

pub fn load_history(id: &str, store: &dyn Store) -> Result<Session> {
    check_session_id(id)?;
    let bytes = store
        .get(&session_key(id))?
        .ok_or_else(|| Error::State(format!("no stored history for session {id}")))?;
    let session = decode_session(&bytes)?;
    if session.id != id {
        return Err(Error::Integrity(format!("stored session is {}, expected {id}", session.id)));
    }
    Ok(session)
}
