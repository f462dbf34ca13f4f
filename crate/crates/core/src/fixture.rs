//! File-backed mock backends. A fixture table maps time regions of an asset
//! to a value; queries resolve to the row with the largest overlap.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotate::LanguageIdBackend;
use crate::domain::{Embedding, Language, TimeSpan};
use crate::error::{Error, Result};
use crate::refine::EmbeddingBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow<T> {
    pub asset: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct RegionTable<T> {
    by_asset: BTreeMap<String, Vec<(TimeSpan, T)>>,
}

impl<T: Clone> RegionTable<T> {
    pub fn from_rows(rows: Vec<RegionRow<T>>) -> Result<Self> {
        let mut by_asset: BTreeMap<String, Vec<(TimeSpan, T)>> = BTreeMap::new();
        for row in rows {
            let span = TimeSpan::from_millis(row.start_ms, row.end_ms)?;
            by_asset.entry(row.asset).or_default().push((span, row.value));
        }
        Ok(Self { by_asset })
    }

    pub fn lookup(&self, asset: &str, span: TimeSpan) -> Option<&T> {
        let rows = self.by_asset.get(asset)?;
        let mut best: Option<(u64, &T)> = None;
        for (region, value) in rows {
            let overlap = region.overlap_ms(&span);
            if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, value));
            }
        }
        best.map(|(_, v)| v)
    }
}

impl<T: Clone + DeserializeOwned> RegionTable<T> {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rows: Vec<RegionRow<T>> = serde_json::from_str(&text)?;
        Self::from_rows(rows)
    }
}

pub type EmbeddingTable = RegionTable<Embedding>;
pub type LanguageTable = RegionTable<Language>;

impl EmbeddingBackend for EmbeddingTable {
    fn embed(&self, asset: &str, span: TimeSpan) -> Result<Embedding> {
        self.lookup(asset, span)
            .cloned()
            .ok_or_else(|| Error::backend("embedding", format!("no fixture row for {asset} {span}")))
    }
}

impl LanguageIdBackend for LanguageTable {
    fn detect(&self, asset: &str, span: TimeSpan) -> Result<Option<Language>> {
        Ok(self.lookup(asset, span).cloned())
    }
}
