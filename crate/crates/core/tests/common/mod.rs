//! Helpers shared by the integration tests: fixture paths, an in-memory
//! embedding backend, random instance generators and reference oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use kaf_core::domain::{Embedding, Segment, SpeakerId, TimeSpan};
use kaf_core::fixture::{EmbeddingTable, LanguageTable};
use kaf_core::pipeline::{self, read_manifest, write_manifest, ParsedRecord, RunConfig};
use kaf_core::refine::{EmbeddingBackend, RefineConfig, SpeakerCluster};
use kaf_core::{Error, Result};
use rand::Rng;

pub const ASSET: &str = "x";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn span(start_ms: u64, end_ms: u64) -> TimeSpan {
    TimeSpan::from_millis(start_ms, end_ms).unwrap()
}

pub fn emb(values: &[f64]) -> Embedding {
    Embedding::new(values.to_vec()).unwrap()
}

/// Unit vector in the plane of the first two axes at cosine `c` to axis 0.
pub fn at_cosine(c: f64, dim: usize) -> Embedding {
    let mut v = vec![0.0; dim];
    v[0] = c;
    v[1] = (1.0 - c * c).sqrt();
    emb(&v)
}

pub fn axis(i: usize, dim: usize) -> Embedding {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    emb(&v)
}

/// Embeddings keyed by exact span, for a single asset.
#[derive(Debug, Default, Clone)]
pub struct SpanBackend {
    pub rows: BTreeMap<(u64, u64), Embedding>,
}

impl SpanBackend {
    pub fn insert(&mut self, span: TimeSpan, e: Embedding) {
        self.rows.insert((span.start_ms(), span.end_ms()), e);
    }
}

impl EmbeddingBackend for SpanBackend {
    fn embed(&self, _asset: &str, span: TimeSpan) -> Result<Embedding> {
        self.rows
            .get(&(span.start_ms(), span.end_ms()))
            .cloned()
            .ok_or_else(|| Error::backend("embedding", format!("no row for {span}")))
    }
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
            return unit(&v);
        }
    }
}

/// `base` plus uniform noise of amplitude `noise`.
pub fn jitter<R: Rng>(rng: &mut R, base: &[f64], noise: f64) -> Vec<f64> {
    unit(&base.iter().map(|x| x + rng.gen_range(-noise..=noise)).collect::<Vec<_>>())
}

/// A small random reassignment instance: clusters, segments and per-chunk
/// embeddings, some segments drawn from one speaker and some mixed.
pub struct ReassignInstance {
    pub clusters: Vec<SpeakerCluster>,
    pub segments: Vec<Segment>,
    pub backend: SpanBackend,
}

pub fn random_reassign_instance<R: Rng>(rng: &mut R, cfg: &RefineConfig) -> ReassignInstance {
    let dim = rng.gen_range(2..=8);
    let n_clusters = rng.gen_range(1..=5);
    let n_segments = rng.gen_range(1..=12);
    let mut ids: Vec<SpeakerId> = Vec::new();
    while ids.len() < n_clusters {
        let id = rng.gen_range(0..20);
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let centroids: Vec<Vec<f64>> = (0..n_clusters).map(|_| random_unit(rng, dim)).collect();
    let clusters = ids
        .iter()
        .zip(&centroids)
        .enumerate()
        .map(|(i, (&id, c))| SpeakerCluster::new(id, vec![i], emb(c)))
        .collect();

    let chunk = cfg.chunk_len_ms();
    let mut backend = SpanBackend::default();
    let mut segments = Vec::new();
    let mut t = rng.gen_range(0..2_000);
    for _ in 0..n_segments {
        // up to 5 chunks, last one possibly short
        let len = rng.gen_range(1..=5 * chunk);
        let seg = Segment::new(ASSET, span(t, t + len), ids[rng.gen_range(0..n_clusters)]);
        let mixed = rng.gen_bool(0.5);
        let home = rng.gen_range(0..n_clusters);
        let mut start = t;
        while start < t + len {
            let end = (start + chunk).min(t + len);
            let who = if mixed { rng.gen_range(0..n_clusters) } else { home };
            let noise = if rng.gen_bool(0.3) { 1.0 } else { 0.2 };
            backend.insert(span(start, end), emb(&jitter(rng, &centroids[who], noise)));
            start = end;
        }
        segments.push(seg);
        t += len + rng.gen_range(0..3_000);
    }
    ReassignInstance { clusters, segments, backend }
}

/// Reassignment by exhaustive search: when any adjacent chunk pair of a
/// segment is below the split threshold, every labelling of its chunks is
/// enumerated and the one with the largest total similarity wins, earliest
/// in id order on ties. Equal-label runs are then coalesced.
pub fn oracle_reassign(inst: &ReassignInstance, cfg: &RefineConfig) -> Vec<Segment> {
    let mut clusters: Vec<&SpeakerCluster> = inst.clusters.iter().collect();
    clusters.sort_by_key(|c| c.id);
    let chunk = cfg.chunk_len_ms();
    let mut out = Vec::new();
    for seg in &inst.segments {
        let mut spans = Vec::new();
        let mut s = seg.span.start_ms();
        while s < seg.span.end_ms() {
            let e = (s + chunk).min(seg.span.end_ms());
            spans.push((s, e));
            s = e;
        }
        let embs: Vec<&[f64]> = spans.iter().map(|k| inst.backend.rows[k].values()).collect();
        let impure = embs.windows(2).any(|w| cos(w[0], w[1]) < cfg.split_threshold);
        if spans.len() < 2 || !impure {
            out.push(seg.clone());
            continue;
        }
        let sims: Vec<Vec<f64>> = embs
            .iter()
            .map(|e| clusters.iter().map(|c| cos(e, c.centroid.values())).collect())
            .collect();
        let k = clusters.len();
        let total = k.pow(spans.len() as u32);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for code in 0..total {
            // most significant digit is the first chunk, so codes run in lexicographic order
            let mut labels = vec![0; spans.len()];
            let mut rest = code;
            for slot in labels.iter_mut().rev() {
                *slot = rest % k;
                rest /= k;
            }
            let score: f64 = labels.iter().enumerate().map(|(i, &l)| sims[i][l]).sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, labels));
            }
        }
        let labels = best.unwrap().1;
        let mut pieces: Vec<Segment> = Vec::new();
        for (&(s, e), l) in spans.iter().zip(labels) {
            let id = clusters[l].id;
            match pieces.last_mut() {
                Some(p) if p.speaker == id => p.span = span(p.span.start_ms(), e),
                _ => pieces.push(seg.with_span(span(s, e), id)),
            }
        }
        out.extend(pieces);
    }
    out
}

/// Sorted, disjoint same-asset segments with long runs of the same speaker
/// and gaps clustered around the gap bound.
pub fn random_merge_instance<R: Rng>(rng: &mut R, cfg: &RefineConfig) -> Vec<Segment> {
    let n = rng.gen_range(0..=12);
    let speakers = rng.gen_range(1..=3);
    let max_gap = cfg.max_gap_ms();
    let mut t = rng.gen_range(0..1_000);
    let mut speaker = 0;
    let mut out = Vec::new();
    for _ in 0..n {
        if rng.gen_bool(0.25) {
            speaker = rng.gen_range(0..speakers);
        }
        let len = match rng.gen_range(0..4) {
            0 => rng.gen_range(1..1_000),
            1 => rng.gen_range(1_000..8_000),
            2 => rng.gen_range(8_000..20_000),
            _ => cfg.max_accum_ms() - rng.gen_range(0..3) * 1_000,
        };
        out.push(Segment::new(ASSET, span(t, t + len), speaker));
        let gap = match rng.gen_range(0..4) {
            0 => max_gap,
            1 => max_gap + 1,
            2 => rng.gen_range(0..max_gap),
            _ => rng.gen_range(0..2 * max_gap),
        };
        t += len + gap;
    }
    out
}

/// Reference stepper for segment merging. A new output segment starts at
/// input `i` when the speaker changes, the gap to the previous input exceeds
/// the bound, or the open output already spans more than the accumulation
/// bound. Everything in between is one output running first start to last end.
pub fn oracle_merge_segments(segments: &[Segment], cfg: &RefineConfig) -> Vec<(u64, u64, SpeakerId)> {
    let mut starts = Vec::new();
    let mut open_start = 0u64;
    for (i, seg) in segments.iter().enumerate() {
        let new_run = i == 0 || {
            let prev = &segments[i - 1];
            prev.speaker != seg.speaker
                || seg.span.start_ms() - prev.span.end_ms() > cfg.max_gap_ms()
                || prev.span.end_ms() - open_start > cfg.max_accum_ms()
        };
        if new_run {
            starts.push(i);
            open_start = seg.span.start_ms();
        }
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &first)| {
            let last = starts.get(k + 1).map_or(segments.len(), |&n| n) - 1;
            (segments[first].span.start_ms(), segments[last].span.end_ms(), segments[first].speaker)
        })
        .collect()
}

/// Cluster merging by brute force: each step scores every pair of current
/// groups from the pooled member centroids and merges the best pair above the
/// threshold. Returns the partition as sorted id lists.
pub fn oracle_cluster_groups(clusters: &[SpeakerCluster], cfg: &RefineConfig) -> Vec<Vec<SpeakerId>> {
    let mut sorted: Vec<&SpeakerCluster> = clusters.iter().collect();
    sorted.sort_by_key(|c| c.id);
    let mut groups: Vec<Vec<&SpeakerCluster>> = sorted.into_iter().map(|c| vec![c]).collect();
    let pooled = |g: &[&SpeakerCluster]| -> Vec<f64> {
        let dim = g[0].centroid.dim();
        let mut sum = vec![0.0; dim];
        for c in g {
            let w = c.members.len().max(1) as f64;
            for (s, v) in sum.iter_mut().zip(unit(c.centroid.values())) {
                *s += w * v;
            }
        }
        sum
    };
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let sim = cos(&pooled(&groups[i]), &pooled(&groups[j]));
                if sim > cfg.merge_threshold && best.is_none_or(|(b, _, _)| sim > b) {
                    best = Some((sim, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let moved = groups.remove(j);
        groups[i].extend(moved);
    }
    let mut out: Vec<Vec<SpeakerId>> = groups
        .iter()
        .map(|g| {
            let mut ids: Vec<SpeakerId> = g.iter().map(|c| c.id).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    out.sort();
    out
}

pub fn random_clusters<R: Rng>(rng: &mut R) -> Vec<SpeakerCluster> {
    let dim = rng.gen_range(2..=8);
    let n = rng.gen_range(1..=5);
    let anchors: Vec<Vec<f64>> = (0..rng.gen_range(1..=3)).map(|_| random_unit(rng, dim)).collect();
    (0..n)
        .map(|i| {
            let base = &anchors[rng.gen_range(0..anchors.len())];
            let members = (0..rng.gen_range(1..=4)).map(|m| i * 10 + m).collect();
            SpeakerCluster::new(i as SpeakerId * 3, members, emb(&jitter(rng, base, 0.6)))
        })
        .collect()
}

/// Partition implied by a relabel map.
pub fn groups_of(map: &BTreeMap<SpeakerId, SpeakerId>) -> Vec<Vec<SpeakerId>> {
    let mut by_target: BTreeMap<SpeakerId, Vec<SpeakerId>> = BTreeMap::new();
    for (&from, &to) in map {
        by_target.entry(to).or_default().push(from);
    }
    let mut out: Vec<Vec<SpeakerId>> = by_target.into_values().collect();
    out.sort();
    out
}

/// Bytes produced by the three batch stages on the bundled fixture.
#[derive(Debug, PartialEq, Eq)]
pub struct PipelineBytes {
    pub refined: Vec<u8>,
    pub annotated: Vec<u8>,
    pub container: Vec<u8>,
    pub side: Vec<u8>,
}

fn parse(bytes: &[u8]) -> Vec<ParsedRecord> {
    let (records, skipped) = read_manifest(bytes).unwrap();
    assert!(skipped.is_empty(), "{skipped:?}");
    records
}

/// Runs refine, annotate and build-pretrain in memory on the bundled fixture.
pub fn run_fixture_pipeline(cfg: &RunConfig) -> PipelineBytes {
    let raw = std::fs::read(fixture("raw_manifest.jsonl")).unwrap();
    let embeddings = EmbeddingTable::load(&fixture("embeddings.json")).unwrap();
    let languages = LanguageTable::load(&fixture("languages.json")).unwrap();

    let (refined, _) = pipeline::refine_records(&parse(&raw), &embeddings, cfg).unwrap();
    let mut refined_bytes = Vec::new();
    write_manifest(&mut refined_bytes, &refined).unwrap();

    let (annotated, _) = pipeline::annotate_records(
        &parse(&refined_bytes),
        &languages,
        &kaf_core::annotate::SyntheticTranscriber,
        cfg,
    )
    .unwrap();
    let mut annotated_bytes = Vec::new();
    write_manifest(&mut annotated_bytes, &annotated).unwrap();

    let built = pipeline::build_pretrain(&parse(&annotated_bytes), None, true, cfg).unwrap();
    PipelineBytes {
        refined: refined_bytes,
        annotated: annotated_bytes,
        container: built.container,
        side: serde_json::to_vec_pretty(&built.side).unwrap(),
    }
}

/// A two-session script: `main` runs five clean rounds, `flaky` runs five
/// rounds of which attempt `fault_round` fails at `step`.
pub fn five_round_script(fault_round: Option<(usize, &str)>) -> String {
    let mut lines = vec![
        r#"{"op":"open","session":"main","system_prompt":[1,2,3]}"#.to_owned(),
        r#"{"op":"open","session":"flaky","system_prompt":[9]}"#.to_owned(),
    ];
    if let Some((round, step)) = fault_round {
        lines.push(format!(r#"{{"op":"fault","session":"flaky","round":{round},"step":"{step}"}}"#));
    }
    for r in 0..5u32 {
        let input: Vec<u32> = (0..3 + 2 * r).map(|k| 100 * (r + 1) + k).collect();
        for s in ["main", "flaky"] {
            lines.push(format!(r#"{{"op":"round","session":"{s}","input":{input:?}}}"#));
        }
    }
    lines.join("\n")
}

/// Checks that each round's history counts chain and add up.
pub fn check_history_bookkeeping(s: &kaf_core::orchestrator::SessionSummary, system_prompt_len: usize) {
    let mut expect_before = system_prompt_len;
    for r in &s.rounds {
        assert_eq!(r.history_before, expect_before, "{} round {}", s.session, r.round);
        assert_eq!(r.history_after, r.history_before + r.input_tokens + r.output_tokens());
        assert_eq!(r.retained_frames, 4 * r.output_audio.len());
        expect_before = r.history_after;
    }
    assert_eq!(s.history_len, expect_before);
    assert_eq!(s.history.len(), s.history_len);
}
