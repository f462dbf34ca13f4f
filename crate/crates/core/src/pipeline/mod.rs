//! Manifests, run configuration and the batch and simulator commands.

mod commands;
mod config;
mod manifest;
mod tokens;

pub use commands::{
    annotate_records, build_pretrain, cmd_annotate, cmd_build_pretrain, cmd_refine, cmd_serve_sim,
    cmd_simulate_stream, cmd_stats, manifest_stats, parse_token_text, refine_records, sequence_stats, serve_sim,
    side_file_path, simulate_stream, stats_bytes, AnnotateRunReport, DrawSkip, ManifestStats, PretrainOutput,
    PretrainRunReport, RefineRunReport, SequenceStats, StatsReport, StreamSimReport, ECHO_REPLY,
};
pub use config::{PretrainConfig, RunConfig, CONFIG_ENV};
pub use manifest::{read_manifest, write_manifest, ManifestRecord, ParsedRecord, Skipped, Stage, StageStamp};
pub use tokens::{semantic_tokens, text_tokens};
