//! Diarization post-processing.
//!
//! Raw diarization output is refined in three passes, always in this order:
//!
//! 1. [`merge_speaker_clusters`] folds together cluster labels whose
//!    representative embeddings point the same way.
//! 2. [`reassign_chunks`] cuts each segment into fixed-length chunks and, when
//!    two adjacent chunks disagree, relabels every chunk by nearest centroid.
//! 3. [`merge_segments`] greedily joins neighbouring same-speaker turns into
//!    longer segments, bounded by an accumulated length and a silence gap.
//!
//! Every threshold comparison is strict: a similarity equal to the merge
//! threshold does not merge, a similarity equal to the split threshold does
//! not split, and so on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    check_sorted_disjoint, cosine_similarity, secs_to_ms, Embedding, Segment, SpeakerId, TimeSpan,
};
use crate::error::{Error, Result};

/// Returns a speaker embedding for any span of an asset. Implementations must
/// be deterministic within a run and safe to call from several workers.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, asset: &str, span: TimeSpan) -> Result<Embedding>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for &B {
    fn embed(&self, asset: &str, span: TimeSpan) -> Result<Embedding> {
        (**self).embed(asset, span)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Clusters merge when centroid similarity is strictly above this.
    pub merge_threshold: f64,
    pub chunk_len_s: f64,
    /// Adjacent chunks strictly below this similarity trigger reassignment.
    pub split_threshold: f64,
    pub max_accum_s: f64,
    pub max_gap_s: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            merge_threshold: 0.6,
            chunk_len_s: 1.5,
            split_threshold: 0.5,
            max_accum_s: 27.0,
            max_gap_s: 2.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.split_threshold
            && self.split_threshold <= self.merge_threshold
            && self.merge_threshold < 1.0
            && self.chunk_len_s > 0.0
            && self.max_accum_s > 0.0
            && self.max_gap_s >= 0.0
            && self.chunk_len_ms() > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid refine config: {self:?}")))
        }
    }

    pub fn chunk_len_ms(&self) -> u64 {
        secs_to_ms(self.chunk_len_s)
    }

    pub fn max_accum_ms(&self) -> u64 {
        secs_to_ms(self.max_accum_s)
    }

    pub fn max_gap_ms(&self) -> u64 {
        secs_to_ms(self.max_gap_s)
    }
}

/// A diarization cluster with its representative embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerCluster {
    pub id: SpeakerId,
    /// Indices into the asset's segment list.
    pub members: Vec<usize>,
    /// Unit-norm representative embedding.
    pub centroid: Embedding,
}

impl SpeakerCluster {
    pub fn new(id: SpeakerId, members: Vec<usize>, centroid: Embedding) -> Self {
        Self {
            id,
            members,
            centroid: centroid.normalized(),
        }
    }

    /// Weight of this cluster when centroids are pooled.
    fn weight(&self) -> f64 {
        self.members.len().max(1) as f64
    }
}

/// Old cluster id to canonical cluster id; total over the input ids.
pub type RelabelMap = BTreeMap<SpeakerId, SpeakerId>;

/// A segment the pipeline could not process and passed through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSegment {
    pub source: String,
    pub span: TimeSpan,
    pub reason: String,
}

/// Builds one cluster per speaker label, with the renormalized mean of the
/// members' embeddings as centroid. Segments whose embedding fails are
/// flagged and left out of the centroid.
pub fn initial_clusters(
    segments: &[Segment],
    backend: &dyn EmbeddingBackend,
) -> (Vec<SpeakerCluster>, Vec<FlaggedSegment>) {
    let mut grouped: BTreeMap<SpeakerId, (Vec<usize>, Vec<Embedding>)> = BTreeMap::new();
    let mut flagged = Vec::new();
    for (idx, seg) in segments.iter().enumerate() {
        let entry = grouped.entry(seg.speaker).or_default();
        entry.0.push(idx);
        match backend.embed(&seg.source, seg.span) {
            Ok(e) => entry.1.push(e),
            Err(err) => flagged.push(FlaggedSegment {
                source: seg.source.clone(),
                span: seg.span,
                reason: err.to_string(),
            }),
        }
    }
    let mut clusters = Vec::new();
    for (id, (members, embeddings)) in grouped {
        match Embedding::weighted_mean_direction(embeddings.iter().map(|e| (e, 1.0))) {
            Ok(centroid) => clusters.push(SpeakerCluster::new(id, members, centroid)),
            Err(err) => {
                // no usable embedding for this label; it keeps its own id
                for &m in &members {
                    let seg = &segments[m];
                    if !flagged.iter().any(|f| f.span == seg.span && f.source == seg.source) {
                        flagged.push(FlaggedSegment {
                            source: seg.source.clone(),
                            span: seg.span,
                            reason: format!("cluster {id} has no centroid: {err}"),
                        });
                    }
                }
            }
        }
    }
    (clusters, flagged)
}

struct Group {
    ids: Vec<SpeakerId>,
    weight: f64,
    /// Weighted sum of member unit centroids; its direction is the group centroid.
    sum: Vec<f64>,
}

impl Group {
    fn canonical(&self) -> SpeakerId {
        self.ids[0]
    }

    fn similarity(&self, other: &Group) -> f64 {
        let dot: f64 = self.sum.iter().zip(&other.sum).map(|(a, b)| a * b).sum();
        let na = self.sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Agglomerative merging of speaker clusters.
///
/// Repeatedly merges the most similar pair whose centroid similarity is
/// strictly above `cfg.merge_threshold`, recomputing the merged centroid as the
/// member-count-weighted mean direction, until no pair qualifies. Ties on
/// similarity go to the pair with the lexicographically smallest canonical ids.
/// Each merged group maps to its smallest id.
pub fn merge_speaker_clusters(clusters: &[SpeakerCluster], cfg: &RefineConfig) -> Result<RelabelMap> {
    let mut sorted: Vec<&SpeakerCluster> = clusters.iter().collect();
    sorted.sort_by_key(|c| c.id);
    if let Some(pair) = sorted.windows(2).find(|p| p[0].id == p[1].id) {
        return Err(Error::contract(format!("duplicate cluster id {}", pair[0].id)));
    }
    if let Some(first) = sorted.first() {
        let dim = first.centroid.dim();
        if let Some(bad) = sorted.iter().find(|c| c.centroid.dim() != dim) {
            return Err(Error::contract(format!(
                "cluster {} has dimension {} but cluster {} has {dim}",
                bad.id,
                bad.centroid.dim(),
                first.id
            )));
        }
    }

    let mut groups: Vec<Group> = sorted
        .iter()
        .map(|c| {
            let w = c.weight();
            let unit = c.centroid.normalized();
            Group {
                ids: vec![c.id],
                weight: w,
                sum: unit.values().iter().map(|v| v * w).collect(),
            }
        })
        .collect();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                let sim = groups[i].similarity(&groups[j]);
                if sim > cfg.merge_threshold && best.is_none_or(|(b, _, _)| sim > b) {
                    best = Some((sim, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let absorbed = groups.remove(j);
        let keep = &mut groups[i];
        keep.ids.extend(absorbed.ids);
        keep.ids.sort_unstable();
        keep.weight += absorbed.weight;
        for (s, v) in keep.sum.iter_mut().zip(absorbed.sum) {
            *s += v;
        }
    }

    let mut map = RelabelMap::new();
    for g in &groups {
        for &id in &g.ids {
            map.insert(id, g.canonical());
        }
    }
    Ok(map)
}

/// Applies a relabel map to segment speakers. Unknown ids are left as is.
pub fn relabel(segments: &mut [Segment], map: &RelabelMap) {
    for seg in segments {
        if let Some(&to) = map.get(&seg.speaker) {
            seg.speaker = to;
        }
    }
}

/// Collapses clusters according to `map`, pooling centroids with member-count
/// weights. Output is sorted by canonical id.
pub fn merged_clusters(clusters: &[SpeakerCluster], map: &RelabelMap) -> Result<Vec<SpeakerCluster>> {
    let mut pooled: BTreeMap<SpeakerId, Vec<&SpeakerCluster>> = BTreeMap::new();
    for c in clusters {
        let to = map.get(&c.id).copied().unwrap_or(c.id);
        pooled.entry(to).or_default().push(c);
    }
    pooled
        .into_iter()
        .map(|(id, parts)| {
            let mut members: Vec<usize> = parts.iter().flat_map(|c| c.members.iter().copied()).collect();
            members.sort_unstable();
            let centroid =
                Embedding::weighted_mean_direction(parts.iter().map(|c| (&c.centroid, c.weight())))?;
            Ok(SpeakerCluster::new(id, members, centroid))
        })
        .collect()
}

/// Splits `span` into consecutive `chunk_ms` pieces; the last may be shorter.
pub fn chunk_spans(span: TimeSpan, chunk_ms: u64) -> Vec<TimeSpan> {
    assert!(chunk_ms > 0, "chunk length must be positive");
    let mut out = Vec::new();
    let mut start = span.start_ms();
    while start < span.end_ms() {
        let end = (start + chunk_ms).min(span.end_ms());
        out.push(TimeSpan::from_millis(start, end).expect("non-empty chunk"));
        start = end;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReassignReport {
    /// Segments whose chunks disagreed and were relabeled chunk by chunk.
    pub reassigned_segments: usize,
    /// Segments produced from those, after coalescing equal-label runs.
    pub pieces: usize,
    pub flagged: Vec<FlaggedSegment>,
}

/// Chunk-based reassignment of impure segments.
///
/// `clusters` should be the post-merge clusters. A segment is left alone
/// unless some adjacent chunk pair has similarity strictly below
/// `cfg.split_threshold`; then each chunk goes to the most similar centroid
/// (smallest id on ties) and equal-label runs are coalesced. Backend failures
/// pass the segment through and flag it in the report.
pub fn reassign_chunks(
    segments: &[Segment],
    clusters: &[SpeakerCluster],
    backend: &dyn EmbeddingBackend,
    cfg: &RefineConfig,
) -> Result<(Vec<Segment>, ReassignReport)> {
    check_sorted_disjoint(segments)?;
    let mut ordered: Vec<&SpeakerCluster> = clusters.iter().collect();
    ordered.sort_by_key(|c| c.id);

    let mut out = Vec::with_capacity(segments.len());
    let mut report = ReassignReport::default();
    for seg in segments {
        match reassign_one(seg, &ordered, backend, cfg) {
            Ok(None) => out.push(seg.clone()),
            Ok(Some(pieces)) => {
                report.reassigned_segments += 1;
                report.pieces += pieces.len();
                out.extend(pieces);
            }
            Err(err) => {
                report.flagged.push(FlaggedSegment {
                    source: seg.source.clone(),
                    span: seg.span,
                    reason: err.to_string(),
                });
                out.push(seg.clone());
            }
        }
    }
    Ok((out, report))
}

fn reassign_one(
    seg: &Segment,
    clusters: &[&SpeakerCluster],
    backend: &dyn EmbeddingBackend,
    cfg: &RefineConfig,
) -> Result<Option<Vec<Segment>>> {
    let chunks = chunk_spans(seg.span, cfg.chunk_len_ms());
    if chunks.len() < 2 {
        return Ok(None);
    }
    let embeddings = chunks
        .iter()
        .map(|&c| backend.embed(&seg.source, c))
        .collect::<Result<Vec<_>>>()?;

    let mut impure = false;
    for pair in embeddings.windows(2) {
        if cosine_similarity(&pair[0], &pair[1])? < cfg.split_threshold {
            impure = true;
            break;
        }
    }
    if !impure {
        return Ok(None);
    }
    if clusters.is_empty() {
        return Err(Error::contract("no clusters available for reassignment"));
    }

    let mut labels = Vec::with_capacity(chunks.len());
    for emb in &embeddings {
        let mut best: Option<(f64, SpeakerId)> = None;
        for c in clusters {
            let sim = cosine_similarity(emb, &c.centroid)?;
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, c.id));
            }
        }
        labels.push(best.expect("clusters non-empty").1);
    }

    let mut pieces: Vec<Segment> = Vec::new();
    for (chunk, label) in chunks.iter().zip(labels) {
        match pieces.last_mut() {
            Some(last) if last.speaker == label => {
                last.span = TimeSpan::from_millis(last.span.start_ms(), chunk.end_ms())?;
            }
            _ => pieces.push(seg.with_span(*chunk, label)),
        }
    }
    Ok(Some(pieces))
}

/// Greedy left-to-right merging of adjacent same-speaker segments.
///
/// The next segment joins the open merged segment iff it has the same speaker
/// and asset, the silence gap is at most `max_gap`, and the open segment's
/// length (end minus start, gaps included) does not yet exceed `max_accum`.
/// A merged segment may therefore overshoot `max_accum` by one input segment.
/// Merged spans run from the first start to the last end, so the bridged gaps
/// become part of the output; annotations are dropped from merged segments.
pub fn merge_segments(segments: &[Segment], cfg: &RefineConfig) -> Result<Vec<Segment>> {
    check_sorted_disjoint(segments)?;
    let max_gap = cfg.max_gap_ms();
    let max_accum = cfg.max_accum_ms();

    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    let mut open_merged = false;
    for seg in segments {
        if let Some(open) = out.last_mut() {
            let joinable = open.speaker == seg.speaker
                && open.source == seg.source
                && seg.span.start_ms() - open.span.end_ms() <= max_gap
                && open.span.duration_ms() <= max_accum;
            if joinable {
                if !open_merged {
                    *open = open.with_span(open.span, open.speaker);
                    open_merged = true;
                }
                open.span = TimeSpan::from_millis(open.span.start_ms(), seg.span.end_ms())?;
                continue;
            }
        }
        out.push(seg.clone());
        open_merged = false;
    }
    Ok(out)
}

/// Counters for one asset's refinement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub segments_in: usize,
    pub segments_out: usize,
    pub clusters_in: usize,
    pub clusters_out: usize,
    pub cluster_merges: usize,
    pub reassigned_segments: usize,
    pub reassigned_pieces: usize,
    pub flagged: Vec<FlaggedSegment>,
}

/// Runs cluster merging, chunk reassignment and segment merging on the
/// segments of one asset.
pub fn refine_asset(
    segments: &[Segment],
    backend: &dyn EmbeddingBackend,
    cfg: &RefineConfig,
) -> Result<(Vec<Segment>, RefineReport)> {
    cfg.validate()?;
    check_sorted_disjoint(segments)?;
    let (clusters, mut flagged) = initial_clusters(segments, backend);
    let map = merge_speaker_clusters(&clusters, cfg)?;
    let mut relabeled = segments.to_vec();
    relabel(&mut relabeled, &map);
    let merged = merged_clusters(&clusters, &map)?;

    let (reassigned, reassign_report) = reassign_chunks(&relabeled, &merged, backend, cfg)?;
    for f in reassign_report.flagged {
        if !flagged.contains(&f) {
            flagged.push(f);
        }
    }
    let out = merge_segments(&reassigned, cfg)?;

    let report = RefineReport {
        segments_in: segments.len(),
        segments_out: out.len(),
        clusters_in: clusters.len(),
        clusters_out: merged.len(),
        cluster_merges: clusters.len() - merged.len(),
        reassigned_segments: reassign_report.reassigned_segments,
        reassigned_pieces: reassign_report.pieces,
        flagged,
    };
    Ok((out, report))
}
