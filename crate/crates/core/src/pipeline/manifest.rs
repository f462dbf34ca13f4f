//! Line-delimited JSON manifests, one asset per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::Segment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Refined,
    Annotated,
}

impl Stage {
    pub const ORDER: [Stage; 2] = [Stage::Refined, Stage::Annotated];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageStamp {
    pub stage: Stage,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub asset: String,
    /// Path or URI of the audio.
    pub source: String,
    pub duration_ms: u64,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageStamp>,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        if self.asset.is_empty() {
            return Err(Error::contract("asset id is empty"));
        }
        for (i, stamp) in self.stages.iter().enumerate() {
            if Stage::ORDER.get(i) != Some(&stamp.stage) {
                return Err(Error::contract(format!(
                    "stage stamps {:?} are not a prefix of {:?}",
                    self.stages.iter().map(|s| s.stage).collect::<Vec<_>>(),
                    Stage::ORDER
                )));
            }
        }
        for seg in &self.segments {
            if seg.source != self.asset {
                return Err(Error::contract(format!("segment source {} differs from asset {}", seg.source, self.asset)));
            }
            if seg.span.end_ms() > self.duration_ms {
                return Err(Error::contract(format!("segment {} runs past the asset end", seg.span)));
            }
        }
        Ok(())
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage)
    }

    /// Appends `stage`, which must be the next stage in order.
    pub fn stamp(&mut self, stage: Stage, config_hash: &str) -> Result<()> {
        let next = Stage::ORDER.get(self.stages.len()).copied();
        if next != Some(stage) {
            return Err(Error::contract(format!(
                "asset {} cannot be stamped {stage:?} after {:?}",
                self.asset,
                self.stages.last().map(|s| s.stage)
            )));
        }
        self.stages.push(StageStamp { stage, config_hash: config_hash.to_owned() });
        Ok(())
    }
}

/// A manifest line that could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asset: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecord {
    pub line: usize,
    pub record: ManifestRecord,
}

/// Reads a manifest. Malformed or invalid lines and repeated asset ids are
/// returned as skips; only I/O failures are errors.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<(Vec<ParsedRecord>, Vec<Skipped>)> {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ManifestRecord>(&line)
            .map_err(|e| Error::contract(e.to_string()))
            .and_then(|r| r.validate().map(|_| r));
        match parsed {
            Ok(record) if !seen.insert(record.asset.clone()) => skipped.push(Skipped {
                line: line_no,
                asset: Some(record.asset),
                reason: "duplicate asset id".into(),
            }),
            Ok(record) => records.push(ParsedRecord { line: line_no, record }),
            Err(e) => skipped.push(Skipped { line: line_no, asset: None, reason: e.to_string() }),
        }
    }
    Ok((records, skipped))
}

pub fn write_manifest<W: Write>(mut out: W, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
