//! The `KAFSEQ1` record container.
//!
//! ```text
//! magic      8 bytes   "KAFSEQ1\0"
//! header     u32 LE length, then that many bytes of JSON (ContainerHeader)
//! record*    u32 LE length (never 0xFFFF_FFFF), payload, 8-byte digest
//! trailer    u32 LE 0xFFFF_FFFF, u64 LE record count, 8-byte digest
//! ```
//!
//! A record digest is the first 8 bytes of SHA-256 over its payload; the
//! trailer digest covers the concatenated record digests. Truncation anywhere
//! (including at a record boundary) and any flipped payload byte are reported
//! as [`Error::Integrity`].

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sft::SftTask;
use super::task::{InputMode, Position, SequenceLabel, TaskKind, TaskSequence};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KAFSEQ1\0";
const END_MARKER: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    TaskSequence,
    Session,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub format: String,
    pub payload: PayloadKind,
    pub config_hash: String,
}

impl ContainerHeader {
    pub fn new(payload: PayloadKind, config_hash: impl Into<String>) -> Self {
        Self {
            format: "KAFSEQ1".into(),
            payload,
            config_hash: config_hash.into(),
        }
    }
}

fn digest8(bytes: &[u8]) -> [u8; 8] {
    let d = Sha256::digest(bytes);
    d[..8].try_into().expect("digest is 32 bytes")
}

pub struct ContainerWriter<W: Write> {
    out: W,
    count: u64,
    digests: Vec<u8>,
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(mut out: W, header: &ContainerHeader) -> Result<Self> {
        let header = serde_json::to_vec(header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        Ok(Self {
            out,
            count: 0,
            digests: Vec::new(),
        })
    }

    pub fn write_record(&mut self, payload: &[u8]) -> Result<()> {
        let len = u32::try_from(payload.len())
            .ok()
            .filter(|&l| l != END_MARKER)
            .ok_or_else(|| Error::contract("record payload too large"))?;
        let digest = digest8(payload);
        self.out.write_all(&len.to_le_bytes())?;
        self.out.write_all(payload)?;
        self.out.write_all(&digest)?;
        self.digests.extend_from_slice(&digest);
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.write_all(&END_MARKER.to_le_bytes())?;
        self.out.write_all(&self.count.to_le_bytes())?;
        self.out.write_all(&digest8(&self.digests))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Serializes a header and records to bytes in one go.
pub fn write_container(header: &ContainerHeader, records: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut w = ContainerWriter::new(Vec::new(), header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.finish()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("truncated container: {what} at byte {} needs {n} bytes", self.at))
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses and verifies a whole container.
pub fn read_container(bytes: &[u8]) -> Result<(ContainerHeader, Vec<Vec<u8>>)> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Integrity("bad magic: not a KAFSEQ1 container".into()));
    }
    let hlen = c.u32("header length")? as usize;
    let header: ContainerHeader = serde_json::from_slice(c.take(hlen, "header")?)
        .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;

    let mut records = Vec::new();
    let mut digests = Vec::new();
    loop {
        let len = c.u32("record length")?;
        if len == END_MARKER {
            break;
        }
        let payload = c.take(len as usize, "record payload")?;
        let stored = c.take(8, "record digest")?;
        if digest8(payload) != stored {
            return Err(Error::Integrity(format!("checksum mismatch in record {}", records.len())));
        }
        digests.extend_from_slice(stored);
        records.push(payload.to_vec());
    }
    let count = c.u64("record count")?;
    let total = c.take(8, "trailer digest")?;
    if count != records.len() as u64 || digest8(&digests) != total {
        return Err(Error::Integrity(format!(
            "trailer mismatch: header claims {count} records, found {}",
            records.len()
        )));
    }
    if c.at != bytes.len() {
        return Err(Error::Integrity(format!("{} trailing bytes after trailer", bytes.len() - c.at)));
    }
    Ok((header, records))
}

const HAS_AUDIO: u8 = 1;
const HAS_TEXT: u8 = 2;
const LOSS_AUDIO: u8 = 4;
const LOSS_TEXT: u8 = 8;

fn label_code(label: SequenceLabel) -> (u8, u8) {
    match label {
        SequenceLabel::Pretrain(k) => (0, k.index() as u8),
        SequenceLabel::Sft(t) => (1, t.code()),
    }
}

/// Binary record encoding of a [`TaskSequence`].
///
/// `u8 family, u8 kind, u32 audio_blank, u8 has_text_blank, u32 text_blank,
/// u32 delay, u32 n`, then per position `u8 flags, u8 mode, u32 segment,
/// u32 audio, u32 text`, all little-endian.
pub fn encode_sequence(seq: &TaskSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(19 + seq.len() * 14);
    let (family, kind) = label_code(seq.label);
    out.push(family);
    out.push(kind);
    out.extend_from_slice(&seq.audio_blank.to_le_bytes());
    out.push(seq.text_blank.is_some() as u8);
    out.extend_from_slice(&seq.text_blank.unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&(seq.delay as u32).to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    for (i, p) in seq.positions.iter().enumerate() {
        let mut flags = 0;
        if p.audio.is_some() {
            flags |= HAS_AUDIO;
        }
        if p.text.is_some() {
            flags |= HAS_TEXT;
        }
        if seq.loss_mask_audio[i] {
            flags |= LOSS_AUDIO;
        }
        if seq.loss_mask_text[i] {
            flags |= LOSS_TEXT;
        }
        out.push(flags);
        out.push(p.mode.code());
        out.extend_from_slice(&(p.segment as u32).to_le_bytes());
        out.extend_from_slice(&p.audio.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&p.text.unwrap_or(0).to_le_bytes());
    }
    out
}

/// Decodes and validates one sequence record.
pub fn decode_sequence(bytes: &[u8]) -> Result<TaskSequence> {
    let mut c = Cursor { bytes, at: 0 };
    let family = c.u8("label family")?;
    let kind = c.u8("label kind")?;
    let label = match family {
        0 => TaskKind::ALL.get(kind as usize).map(|&k| SequenceLabel::Pretrain(k)),
        1 => SftTask::from_code(kind).map(SequenceLabel::Sft),
        _ => None,
    }
    .ok_or_else(|| Error::Integrity(format!("unknown sequence label {family}/{kind}")))?;
    let audio_blank = c.u32("audio blank")?;
    let has_text_blank = c.u8("text blank flag")?;
    let text_blank = c.u32("text blank")?;
    let delay = c.u32("delay")? as usize;
    let n = c.u32("position count")? as usize;
    if bytes.len() - c.at != n * 14 {
        return Err(Error::Integrity(format!(
            "sequence record declares {n} positions but carries {} bytes",
            bytes.len() - c.at
        )));
    }
    let mut seq = TaskSequence {
        label,
        positions: Vec::with_capacity(n),
        loss_mask_audio: Vec::with_capacity(n),
        loss_mask_text: Vec::with_capacity(n),
        audio_blank,
        text_blank: (has_text_blank == 1).then_some(text_blank),
        delay,
    };
    for _ in 0..n {
        let flags = c.u8("flags")?;
        let mode = InputMode::from_code(c.u8("mode")?)
            .ok_or_else(|| Error::Integrity("unknown input mode".into()))?;
        let segment = c.u32("segment")? as usize;
        let audio = c.u32("audio token")?;
        let text = c.u32("text token")?;
        if flags & !(HAS_AUDIO | HAS_TEXT | LOSS_AUDIO | LOSS_TEXT) != 0 {
            return Err(Error::Integrity(format!("unknown flag bits {flags:#x}")));
        }
        seq.positions.push(Position {
            audio: (flags & HAS_AUDIO != 0).then_some(audio),
            text: (flags & HAS_TEXT != 0).then_some(text),
            segment,
            mode,
        });
        seq.loss_mask_audio.push(flags & LOSS_AUDIO != 0);
        seq.loss_mask_text.push(flags & LOSS_TEXT != 0);
    }
    seq.validate()?;
    Ok(seq)
}

/// One line of the human-readable side file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub index: usize,
    pub label: SequenceLabel,
    pub source: String,
    pub positions: usize,
    pub loss_audio_positions: usize,
    pub loss_text_positions: usize,
    pub pattern: String,
}

impl RecordSummary {
    pub fn of(index: usize, source: impl Into<String>, seq: &TaskSequence) -> Self {
        Self {
            index,
            label: seq.label,
            source: source.into(),
            positions: seq.len(),
            loss_audio_positions: seq.loss_mask_audio.iter().filter(|&&b| b).count(),
            loss_text_positions: seq.loss_mask_text.iter().filter(|&&b| b).count(),
            pattern: seq.pattern(),
        }
    }
}

/// JSON companion of a sequence container.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideFile {
    pub format: String,
    pub config_hash: String,
    pub records: Vec<RecordSummary>,
}
