//! Runs refine, annotate and build-pretrain over the bundled fixture in a
//! temporary directory, as the `kaf` binary would.
//!
//! cargo run --example fixture_pipeline -- [workers]

use std::path::Path;

use kaf_core::pipeline::{cmd_annotate, cmd_build_pretrain, cmd_refine, cmd_stats, RunConfig};

fn main() -> kaf_core::Result<()> {
    let workers = std::env::args().nth(1).and_then(|w| w.parse().ok()).unwrap_or(4);
    let cfg = RunConfig { workers, ..RunConfig::default() };
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out = std::env::temp_dir().join(format!("kaf-fixture-{}", std::process::id()));
    std::fs::create_dir_all(&out)?;

    let refined = out.join("refined.jsonl");
    let annotated = out.join("annotated.jsonl");
    let container = out.join("pretrain.kafseq");
    let r = cmd_refine(&fixtures.join("raw_manifest.jsonl"), &refined, &fixtures.join("embeddings.json"), &cfg)?;
    println!("refine: {} -> {} segments", r.segments_in, r.segments_out);
    let a = cmd_annotate(&refined, &annotated, &fixtures.join("languages.json"), &cfg)?;
    println!("annotate: {} transcribed, {} discarded", a.transcribed, a.discarded);
    let p = cmd_build_pretrain(&annotated, &container, None, false, &cfg)?;
    println!("build-pretrain: {} sequences, {} infeasible draws", p.sequences, p.skipped_draws.len());
    println!("{}", serde_json::to_string_pretty(&cmd_stats(&container)?)?);
    println!("config hash {}", p.config_hash);

    std::fs::remove_dir_all(&out)?;
    Ok(())
}
