//! The batch and simulator commands. Each has an in-memory form used by tests
//! and examples, and a file form used by the `kaf` binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::{read_manifest, write_manifest, ManifestRecord, ParsedRecord, Skipped, Stage};
use super::tokens::{semantic_tokens, text_tokens};
use crate::annotate::{annotate_segment, AnnotateReport, LanguageIdBackend, SyntheticTranscriber, TranscriptionBackend};
use crate::domain::{TokenStream, Vocab};
use crate::error::{Error, Result};
use crate::fixture::{EmbeddingTable, LanguageTable};
use crate::orchestrator::{
    run_script, Backends, ConversationLedger, EchoLlm, EmptyFrameVad, FileStore, Orchestrator, Script, Store,
    WordTokenizer,
};
use crate::parallel::ordered_map;
use crate::refine::{refine_asset, EmbeddingBackend, FlaggedSegment};
use crate::rng::derived;
use crate::sequencer::container::{
    decode_sequence, encode_sequence, read_container, write_container, ContainerHeader, PayloadKind, RecordSummary,
    SideFile, MAGIC,
};
use crate::sequencer::{
    align_streams, build_task_sequence, AlignedPair, InterleaveLayout, SequenceLabel, SequenceOptions, TaskKind,
    TaskMixer, TaskSequence,
};
use crate::stream::{frame_checksum, offline_hash_frames, plan_for, run_planned, HashMelDecoder, NullSink, StreamReport};

fn read_manifest_file(path: &Path) -> Result<(Vec<ParsedRecord>, Vec<Skipped>)> {
    read_manifest(BufReader::new(File::open(path)?))
}

fn write_manifest_file(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    write_manifest(std::io::BufWriter::new(File::create(path)?), records)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineRunReport {
    pub config_hash: String,
    pub assets_in: usize,
    pub assets_out: usize,
    pub skipped: Vec<Skipped>,
    pub segments_in: usize,
    pub segments_out: usize,
    pub cluster_merges: usize,
    pub split_segments: usize,
    pub split_pieces: usize,
    pub flagged: Vec<FlaggedSegment>,
}

/// Cluster merging, chunk reassignment and segment merging for every asset.
pub fn refine_records(
    records: &[ParsedRecord],
    backend: &dyn EmbeddingBackend,
    cfg: &RunConfig,
) -> Result<(Vec<ManifestRecord>, RefineRunReport)> {
    let hash = cfg.config_hash()?;
    let results = ordered_map(records, cfg.workers, |p| -> Result<_> {
        if !p.record.stages.is_empty() {
            return Err(Error::contract("asset was already refined"));
        }
        let (segments, report) = refine_asset(&p.record.segments, backend, &cfg.refine)?;
        let mut out = ManifestRecord { segments, ..p.record.clone() };
        out.stamp(Stage::Refined, &hash)?;
        Ok((out, report))
    })?;
    let mut report = RefineRunReport { config_hash: hash, assets_in: records.len(), ..Default::default() };
    let mut out = Vec::new();
    for (p, result) in records.iter().zip(results) {
        match result {
            Ok((record, r)) => {
                report.segments_in += r.segments_in;
                report.segments_out += r.segments_out;
                report.cluster_merges += r.cluster_merges;
                report.split_segments += r.reassigned_segments;
                report.split_pieces += r.reassigned_pieces;
                report.flagged.extend(r.flagged);
                out.push(record);
            }
            Err(e) => report.skipped.push(Skipped {
                line: p.line,
                asset: Some(p.record.asset.clone()),
                reason: e.to_string(),
            }),
        }
    }
    report.assets_out = out.len();
    Ok((out, report))
}

pub fn cmd_refine(input: &Path, output: &Path, embeddings: &Path, cfg: &RunConfig) -> Result<RefineRunReport> {
    let table = EmbeddingTable::load(embeddings)?;
    let (records, skipped) = read_manifest_file(input)?;
    let (out, mut report) = refine_records(&records, &table, cfg)?;
    report.assets_in += skipped.len();
    report.skipped.splice(0..0, skipped);
    report.skipped.sort_by_key(|s| s.line);
    write_manifest_file(output, &out)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotateRunReport {
    pub config_hash: String,
    pub assets_in: usize,
    pub assets_out: usize,
    pub skipped: Vec<Skipped>,
    pub transcribed: usize,
    pub discarded: usize,
    pub failed: usize,
}

/// Language ID, transcription with pause punctuation and the enhancement
/// choice for every segment of every refined asset.
pub fn annotate_records(
    records: &[ParsedRecord],
    langid: &dyn LanguageIdBackend,
    transcriber: &dyn TranscriptionBackend,
    cfg: &RunConfig,
) -> Result<(Vec<ManifestRecord>, AnnotateRunReport)> {
    let hash = cfg.config_hash()?;
    let results = ordered_map(records, cfg.workers, |p| -> Result<_> {
        if !p.record.has_stage(Stage::Refined) || p.record.has_stage(Stage::Annotated) {
            return Err(Error::contract("annotation needs a refined, unannotated asset"));
        }
        let mut record = p.record.clone();
        let mut rng = derived(cfg.seed, &format!("annotate/{}", record.asset));
        let mut report = AnnotateReport::default();
        for seg in &mut record.segments {
            annotate_segment(seg, langid, transcriber, &mut rng, &cfg.annotate, &mut report);
        }
        record.stamp(Stage::Annotated, &hash)?;
        Ok((record, report))
    })?;
    let mut report = AnnotateRunReport { config_hash: hash, assets_in: records.len(), ..Default::default() };
    let mut out = Vec::new();
    for (p, result) in records.iter().zip(results) {
        match result {
            Ok((record, r)) => {
                report.transcribed += r.transcribed;
                report.discarded += r.discarded;
                report.failed += r.failed;
                out.push(record);
            }
            Err(e) => report.skipped.push(Skipped {
                line: p.line,
                asset: Some(p.record.asset.clone()),
                reason: e.to_string(),
            }),
        }
    }
    report.assets_out = out.len();
    Ok((out, report))
}

pub fn cmd_annotate(input: &Path, output: &Path, languages: &Path, cfg: &RunConfig) -> Result<AnnotateRunReport> {
    let table = LanguageTable::load(languages)?;
    let (records, skipped) = read_manifest_file(input)?;
    let (out, mut report) = annotate_records(&records, &table, &SyntheticTranscriber, cfg)?;
    report.assets_in += skipped.len();
    report.skipped.splice(0..0, skipped);
    report.skipped.sort_by_key(|s| s.line);
    write_manifest_file(output, &out)?;
    Ok(report)
}

/// Per-kind counts and loss-position histograms over a set of sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub sequences: usize,
    pub per_kind: BTreeMap<String, usize>,
    /// For each kind, sequences bucketed by how many positions carry loss.
    pub loss_positions: BTreeMap<String, BTreeMap<String, usize>>,
}

fn bucket(n: usize) -> String {
    if n < 2 {
        return n.to_string();
    }
    let lo = 1usize << (usize::BITS - 1 - n.leading_zeros());
    format!("{lo}-{}", 2 * lo - 1)
}

fn label_name(label: &SequenceLabel) -> String {
    match label {
        SequenceLabel::Pretrain(k) => k.name().to_owned(),
        SequenceLabel::Sft(t) => format!("sft_{}", serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()),
    }
}

pub fn sequence_stats<'a>(seqs: impl IntoIterator<Item = &'a TaskSequence>) -> SequenceStats {
    let mut stats = SequenceStats::default();
    for seq in seqs {
        let name = label_name(&seq.label);
        stats.sequences += 1;
        *stats.per_kind.entry(name.clone()).or_default() += 1;
        let loss = (0..seq.len()).filter(|&i| seq.loss_mask_audio[i] || seq.loss_mask_text[i]).count();
        *stats.loss_positions.entry(name).or_default().entry(bucket(loss)).or_default() += 1;
    }
    stats
}

/// A drawn task that the asset could not supply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawSkip {
    pub asset: String,
    pub kind: TaskKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainRunReport {
    pub config_hash: String,
    pub assets_in: usize,
    pub assets_used: usize,
    pub skipped: Vec<Skipped>,
    pub sequences: usize,
    pub skipped_draws: Vec<DrawSkip>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<SequenceStats>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub container: Vec<u8>,
    pub side: SideFile,
    pub sequences: Vec<(String, TaskSequence)>,
    pub report: PretrainRunReport,
}

struct AssetSequences {
    sequences: Vec<TaskSequence>,
    skips: Vec<DrawSkip>,
}

fn asset_sequences(record: &ManifestRecord, task: Option<TaskKind>, cfg: &RunConfig) -> Result<AssetSequences> {
    let Vocab { audio_blank, text_blank } = cfg.vocab;
    let mut all = Vec::with_capacity(record.segments.len());
    let mut with_text = Vec::new();
    for seg in &record.segments {
        let audio = semantic_tokens(&record.asset, seg.span, audio_blank)?;
        match seg.transcript.as_deref().filter(|t| !t.is_empty()) {
            Some(t) => {
                let pair = align_streams(&audio, &text_tokens(t, text_blank)?)?;
                with_text.push(pair.clone());
                all.push(pair);
            }
            None => all.push(AlignedPair::audio_only(audio)?),
        }
    }

    let mut mixer = TaskMixer::with_rng(cfg.weights.clone(), derived(cfg.seed, &format!("mix/{}", record.asset)))?;
    let mut rng = derived(cfg.seed, &format!("pretrain/{}", record.asset));
    let mut out = AssetSequences { sequences: Vec::new(), skips: Vec::new() };
    for _ in 0..cfg.pretrain.sequences_per_asset {
        let kind = task.unwrap_or_else(|| mixer.sample_task());
        let pool = if kind.needs_text() { &with_text } else { &all };
        let min = if kind.is_interleaving() { 2 } else { 1 };
        if pool.len() < min {
            out.skips.push(DrawSkip {
                asset: record.asset.clone(),
                kind,
                reason: format!(
                    "needs {min} segment(s){}, asset has {}",
                    if kind.needs_text() { " with transcripts" } else { "" },
                    pool.len()
                ),
            });
            continue;
        }
        let n = rng.gen_range(min..=pool.len().min(cfg.pretrain.max_segments).max(min));
        let start = rng.gen_range(0..=pool.len() - n);
        let opts = SequenceOptions {
            layout: InterleaveLayout { leading_target: false, trailing_context: n % 2 == 1 },
            delay: cfg.pretrain.delay,
        };
        out.sequences.push(build_task_sequence(kind, &pool[start..start + n], &opts)?);
    }
    Ok(out)
}

/// Draws pre-training sequences from annotated assets.
pub fn build_pretrain(
    records: &[ParsedRecord],
    task: Option<TaskKind>,
    with_stats: bool,
    cfg: &RunConfig,
) -> Result<PretrainOutput> {
    let hash = cfg.config_hash()?;
    let results = ordered_map(records, cfg.workers, |p| {
        if !p.record.has_stage(Stage::Annotated) {
            return Err(Error::contract("pre-training needs an annotated asset"));
        }
        asset_sequences(&p.record, task, cfg)
    })?;
    let mut report = PretrainRunReport { config_hash: hash.clone(), assets_in: records.len(), ..Default::default() };
    let mut sequences = Vec::new();
    for (p, result) in records.iter().zip(results) {
        match result {
            Ok(a) => {
                report.assets_used += 1;
                report.skipped_draws.extend(a.skips);
                sequences.extend(a.sequences.into_iter().map(|s| (p.record.asset.clone(), s)));
            }
            Err(e) => report.skipped.push(Skipped {
                line: p.line,
                asset: Some(p.record.asset.clone()),
                reason: e.to_string(),
            }),
        }
    }
    report.sequences = sequences.len();
    if with_stats {
        report.stats = Some(sequence_stats(sequences.iter().map(|(_, s)| s)));
    }
    let payloads: Vec<Vec<u8>> = sequences.iter().map(|(_, s)| encode_sequence(s)).collect();
    let container = write_container(&ContainerHeader::new(PayloadKind::TaskSequence, hash.clone()), &payloads)?;
    let side = SideFile {
        format: "KAFSEQ1".into(),
        config_hash: hash,
        records: sequences
            .iter()
            .enumerate()
            .map(|(i, (asset, s))| RecordSummary::of(i, asset.clone(), s))
            .collect(),
    };
    Ok(PretrainOutput { container, side, sequences, report })
}

/// `out` plus `.json`.
pub fn side_file_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn cmd_build_pretrain(
    input: &Path,
    output: &Path,
    task: Option<TaskKind>,
    with_stats: bool,
    cfg: &RunConfig,
) -> Result<PretrainRunReport> {
    let (records, skipped) = read_manifest_file(input)?;
    let built = build_pretrain(&records, task, with_stats, cfg)?;
    std::fs::write(output, &built.container)?;
    let mut side = serde_json::to_vec_pretty(&built.side)?;
    side.push(b'\n');
    std::fs::write(side_file_path(output), side)?;
    let mut report = built.report;
    report.assets_in += skipped.len();
    report.skipped.splice(0..0, skipped);
    report.skipped.sort_by_key(|s| s.line);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSimReport {
    pub config_hash: String,
    pub chunk_sizes: Vec<usize>,
    #[serde(flatten)]
    pub stream: StreamReport,
    /// Checksum of the one-shot block-causal computation.
    pub offline_checksum: String,
    pub matches_offline: bool,
}

/// Token ids as a JSON array or separated by whitespace or commas.
pub fn parse_token_text(text: &str) -> Result<Vec<u32>> {
    let t = text.trim();
    if t.starts_with('[') {
        return serde_json::from_str(t).map_err(|e| Error::contract(format!("token file: {e}")));
    }
    t.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u32>().map_err(|e| Error::contract(format!("token file: {s:?}: {e}"))))
        .collect()
}

/// Streams `tokens` through the hash decoder and checks the result against
/// the offline computation.
pub fn simulate_stream(tokens: &[u32], cfg: &RunConfig) -> Result<StreamSimReport> {
    let stream = TokenStream::semantic(tokens.to_vec(), cfg.vocab.audio_blank)?;
    let plans = plan_for(tokens.len(), &cfg.stream, &mut derived(cfg.seed, "stream"));
    let decoder = HashMelDecoder::new(cfg.stream.mel_dim);
    let report = run_planned(stream.tokens(), &plans, cfg.stream.effective_lookahead(), &decoder, &mut NullSink)?;
    let offline_checksum = frame_checksum(&offline_hash_frames(stream.tokens(), &plans, &decoder));
    Ok(StreamSimReport {
        config_hash: cfg.config_hash()?,
        chunk_sizes: plans.iter().map(|p| p.token_range.len()).collect(),
        matches_offline: offline_checksum == report.checksum,
        offline_checksum,
        stream: report,
    })
}

pub fn cmd_simulate_stream(tokens: &Path, cfg: &RunConfig) -> Result<StreamSimReport> {
    simulate_stream(&parse_token_text(&std::fs::read_to_string(tokens)?)?, cfg)
}

/// Reply text of the echo model used by the simulator: the bytes of "ok".
pub const ECHO_REPLY: [u32; 2] = [b'o' as u32, b'k' as u32];

/// Runs a scripted conversation against deterministic mocks.
pub fn serve_sim(script: &str, cfg: &RunConfig, store: Option<&dyn Store>) -> Result<ConversationLedger> {
    let script = Script::parse(script)?;
    let vad = EmptyFrameVad;
    let tokenizer = WordTokenizer { audio_vocab: cfg.vocab.audio_blank };
    let llm = EchoLlm { reply_text: ECHO_REPLY.to_vec() };
    let decoder = HashMelDecoder::new(cfg.stream.mel_dim);
    let backends = Backends { vad: &vad, tokenizer: &tokenizer, llm: &llm, decoder: &decoder, faults: script.faults() };
    let orch = Orchestrator::new(cfg.conversation.clone(), cfg.stream.clone(), backends)?
        .with_audio_blank(cfg.vocab.audio_blank)?
        .with_config_hash(cfg.config_hash()?);
    run_script(&orch, &script, cfg.workers, store)
}

pub fn cmd_serve_sim(script: &Path, store_dir: Option<&Path>, cfg: &RunConfig) -> Result<ConversationLedger> {
    let text = std::fs::read_to_string(script)?;
    let store = store_dir.map(FileStore::new).transpose()?;
    serve_sim(&text, cfg, store.as_ref().map(|s| s as &dyn Store))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestStats {
    pub assets: usize,
    pub skipped: usize,
    pub segments: usize,
    pub speech_ms: u64,
    pub speakers: usize,
    pub transcribed: usize,
    pub languages: BTreeMap<String, usize>,
    pub stages: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatsReport {
    Manifest(ManifestStats),
    Sequences {
        config_hash: String,
        #[serde(flatten)]
        stats: SequenceStats,
    },
    Session {
        config_hash: String,
        session: String,
        history_len: usize,
        rounds: usize,
        incidents: usize,
    },
}

pub fn manifest_stats(records: &[ParsedRecord], skipped: usize) -> ManifestStats {
    let mut s = ManifestStats { assets: records.len(), skipped, ..Default::default() };
    for p in records {
        let r = &p.record;
        s.segments += r.segments.len();
        s.speech_ms += r.segments.iter().map(|g| g.span.duration_ms()).sum::<u64>();
        s.speakers += r.segments.iter().map(|g| g.speaker).collect::<std::collections::BTreeSet<_>>().len();
        s.transcribed += r.segments.iter().filter(|g| g.transcript.is_some()).count();
        for g in &r.segments {
            if let Some(l) = &g.language {
                *s.languages.entry(l.as_str().to_owned()).or_default() += 1;
            }
        }
        for st in &r.stages {
            *s.stages.entry(format!("{:?}", st.stage).to_lowercase()).or_default() += 1;
        }
    }
    s
}

/// Summarizes a manifest, a sequence container or a stored session.
pub fn stats_bytes(bytes: &[u8]) -> Result<StatsReport> {
    if !bytes.starts_with(MAGIC) {
        let (records, skipped) = read_manifest(bytes)?;
        return Ok(StatsReport::Manifest(manifest_stats(&records, skipped.len())));
    }
    let (header, records) = read_container(bytes)?;
    match header.payload {
        PayloadKind::TaskSequence => {
            let seqs = records.iter().map(|r| decode_sequence(r)).collect::<Result<Vec<_>>>()?;
            Ok(StatsReport::Sequences { config_hash: header.config_hash, stats: sequence_stats(&seqs) })
        }
        PayloadKind::Session => {
            let s = crate::orchestrator::decode_session(bytes)?;
            Ok(StatsReport::Session {
                config_hash: header.config_hash,
                session: s.id().to_owned(),
                history_len: s.history().len(),
                rounds: s.ledger().len(),
                incidents: s.incidents().len(),
            })
        }
    }
}

pub fn cmd_stats(path: &Path) -> Result<StatsReport> {
    stats_bytes(&std::fs::read(path)?)
}
