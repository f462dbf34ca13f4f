//! Refines the bundled diarization fixture and prints each asset before and
//! after cluster merging, chunk reassignment and segment merging.
//!
//! cargo run --example refine_diarization

use std::path::Path;

use kaf_core::fixture::EmbeddingTable;
use kaf_core::pipeline::read_manifest;
use kaf_core::refine::{refine_asset, RefineConfig};

fn main() -> kaf_core::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let table = EmbeddingTable::load(&fixtures.join("embeddings.json"))?;
    let manifest = std::fs::read(fixtures.join("raw_manifest.jsonl"))?;
    let (records, _) = read_manifest(manifest.as_slice())?;
    let cfg = RefineConfig::default();

    for p in &records {
        let r = &p.record;
        let (refined, report) = refine_asset(&r.segments, &table, &cfg)?;
        println!(
            "{}: {} -> {} segments, {} cluster merge(s), {} segment(s) split",
            r.asset, report.segments_in, report.segments_out, report.cluster_merges, report.reassigned_segments
        );
        for s in &refined {
            println!("  speaker {:>2}  {}", s.speaker, s.span);
        }
    }
    Ok(())
}
