//! Chunk-wise autoregressive streaming detokenization with look-ahead.
//!
//! The semantic token stream is cut into chunks. Chunk `i` is decoded with
//! every earlier chunk (tokens and the frames already produced for them) as
//! prompt, and with its own tokens plus up to `lookahead` tokens borrowed from
//! chunk `i + 1` as condition. The decoder returns frames for the whole
//! condition; only the chunk's own frames are emitted, the look-ahead frames
//! are thrown away and recomputed as part of the next chunk.
//!
//! Timing is accounted on a simulated clock in token periods: token `k` is
//! available at `k + 1` periods, a chunk is ready once its last token is
//! available, and it is emitted once its look-ahead window of `lookahead`
//! further periods has closed.

use std::ops::Range;
use std::sync::mpsc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::TokenStream;
use crate::error::{Error, Result};
use crate::frames::{tokens_to_mel_frames, tokens_to_seconds, MEL_FRAMES_PER_TOKEN, SEMANTIC_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Fixed chunk size in semantic tokens (12 tokens = 0.96 s).
    pub chunk_tokens: usize,
    /// Future tokens borrowed from the next chunk.
    pub lookahead: usize,
    /// Draw chunk sizes at random instead of using `chunk_tokens`.
    pub dynamic: bool,
    pub min_chunk_s: f64,
    pub max_chunk_s: f64,
    /// Whether dynamic chunking also applies look-ahead.
    pub dynamic_lookahead: bool,
    /// Width of the mock mel frames.
    pub mel_dim: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 12,
            lookahead: 4,
            dynamic: false,
            min_chunk_s: 0.5,
            max_chunk_s: 3.0,
            dynamic_lookahead: true,
            mel_dim: 8,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_tokens == 0 {
            return Err(Error::config("chunk_tokens must be at least 1"));
        }
        if self.mel_dim == 0 {
            return Err(Error::config("mel_dim must be at least 1"));
        }
        if self.dynamic {
            let (lo, hi) = self.dynamic_token_bounds();
            if !(self.min_chunk_s > 0.0 && self.min_chunk_s <= self.max_chunk_s) || lo == 0 || lo > hi {
                return Err(Error::config(format!(
                    "dynamic chunk range {}..{} s holds no whole token count",
                    self.min_chunk_s, self.max_chunk_s
                )));
            }
        }
        Ok(())
    }

    /// Smallest and largest chunk sizes, in tokens, inside the dynamic range.
    pub fn dynamic_token_bounds(&self) -> (usize, usize) {
        let lo = (self.min_chunk_s * SEMANTIC_RATE_HZ).ceil() as usize;
        let hi = (self.max_chunk_s * SEMANTIC_RATE_HZ).floor() as usize;
        (lo, hi)
    }

    /// Look-ahead actually applied; dynamic chunking may turn it off.
    pub fn effective_lookahead(&self) -> usize {
        if self.dynamic && !self.dynamic_lookahead {
            0
        } else {
            self.lookahead
        }
    }
}

/// Schedule for one detokenizer chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub index: usize,
    pub token_range: Range<usize>,
    /// Tokens borrowed from the next chunk; fewer than configured at stream end.
    pub lookahead: usize,
    /// Tokens the decoder may see: all earlier chunks, this chunk, look-ahead.
    pub visible_tokens: Range<usize>,
    /// Mel frames this chunk emits.
    pub retained_frames: Range<usize>,
}

/// Plans from explicit chunk sizes, which must sum to `total`.
pub fn plan_from_sizes(total: usize, sizes: &[usize], lookahead: usize) -> Result<Vec<ChunkPlan>> {
    if sizes.contains(&0) {
        return Err(Error::contract("chunk sizes must be positive"));
    }
    if sizes.iter().sum::<usize>() != total {
        return Err(Error::contract(format!("chunk sizes do not sum to {total} tokens")));
    }
    let mut lo = 0;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(index, &size)| {
            let hi = lo + size;
            let la = lookahead.min(total - hi);
            let plan = ChunkPlan {
                index,
                token_range: lo..hi,
                lookahead: la,
                visible_tokens: 0..hi + la,
                retained_frames: tokens_to_mel_frames(lo)..tokens_to_mel_frames(hi),
            };
            lo = hi;
            plan
        })
        .collect())
}

fn fixed_sizes(total: usize, chunk: usize) -> Vec<usize> {
    let mut sizes = vec![chunk; total / chunk];
    if !total.is_multiple_of(chunk) {
        sizes.push(total % chunk);
    }
    sizes
}

/// Fixed-size chunk plans; the last chunk may be short. Empty for 0 tokens.
pub fn plan_chunks(total: usize, cfg: &StreamConfig) -> Vec<ChunkPlan> {
    plan_from_sizes(total, &fixed_sizes(total, cfg.chunk_tokens.max(1)), cfg.lookahead)
        .expect("fixed sizes are positive and sum to total")
}

/// Random chunk sizes uniform over the token counts of the dynamic range,
/// truncating the final chunk to fit.
pub fn dynamic_chunk_sizes<R: Rng + ?Sized>(total: usize, rng: &mut R, cfg: &StreamConfig) -> Vec<usize> {
    let (lo, hi) = cfg.dynamic_token_bounds();
    let mut sizes = Vec::new();
    let mut left = total;
    while left > 0 {
        let draw = rng.gen_range(lo..=hi);
        let size = draw.min(left);
        sizes.push(size);
        left -= size;
    }
    sizes
}

/// Plans for `total` tokens under `cfg`, drawing dynamic sizes from `rng` when enabled.
pub fn plan_for<R: Rng + ?Sized>(total: usize, cfg: &StreamConfig, rng: &mut R) -> Vec<ChunkPlan> {
    let sizes = if cfg.dynamic {
        dynamic_chunk_sizes(total, rng, cfg)
    } else {
        fixed_sizes(total, cfg.chunk_tokens.max(1))
    };
    plan_from_sizes(total, &sizes, cfg.effective_lookahead()).expect("sizes are valid")
}

/// Attention visibility over frames: full within a chunk, causal across chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCausalMask {
    chunk_of: Vec<usize>,
}

pub fn build_block_causal_mask(chunk_sizes_frames: &[usize]) -> BlockCausalMask {
    let chunk_of = chunk_sizes_frames
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    BlockCausalMask { chunk_of }
}

impl BlockCausalMask {
    pub fn len(&self) -> usize {
        self.chunk_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_of.is_empty()
    }

    /// Whether query frame `q` may attend to key frame `k`.
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.chunk_of[k] <= self.chunk_of[q]
    }

    pub fn chunk_of(&self, frame: usize) -> usize {
        self.chunk_of[frame]
    }

    /// Number of keys visible from `q`; rows are prefixes, so this is also
    /// one past the last visible key.
    pub fn visible_len(&self, q: usize) -> usize {
        visible_prefix(self, q)
    }

    pub fn count_true(&self) -> usize {
        (0..self.len()).map(|q| self.visible_len(q)).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.len())
            .map(|q| (0..self.len()).map(|k| self.get(q, k)).collect())
            .collect()
    }
}

pub type MelFrame = Vec<f32>;

/// Frames emitted for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelBlock {
    pub chunk: usize,
    pub frame_range: Range<usize>,
    pub frames: Vec<MelFrame>,
}

/// A previously decoded chunk offered to the decoder as prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptChunk<'a> {
    pub tokens: &'a [u32],
    pub frames: &'a [MelFrame],
}

/// Token-to-mel backend. Must return exactly four frames per condition token
/// and be deterministic for a given prompt and condition.
pub trait MelDecoder: Send + Sync {
    fn decode(&self, prompt: &[PromptChunk<'_>], condition: &[u32]) -> Result<Vec<MelFrame>>;
}

/// Ordered consumer of emitted blocks.
pub trait FrameSink {
    fn push(&mut self, block: MelBlock) -> Result<()>;
}

impl FrameSink for Vec<MelBlock> {
    fn push(&mut self, block: MelBlock) -> Result<()> {
        Vec::push(self, block);
        Ok(())
    }
}

/// Hands blocks to a consumer on another thread, in order.
impl FrameSink for mpsc::Sender<MelBlock> {
    fn push(&mut self, block: MelBlock) -> Result<()> {
        self.send(block)
            .map_err(|_| Error::backend("sink", "frame consumer hung up"))
    }
}

/// Drops frames; used when only the report matters.
#[derive(Debug, Default)]
pub struct NullSink;

impl FrameSink for NullSink {
    fn push(&mut self, _block: MelBlock) -> Result<()> {
        Ok(())
    }
}

/// When a chunk became ready and when it was emitted, on the simulated clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEmission {
    pub index: usize,
    pub token_range: Range<usize>,
    pub lookahead: usize,
    pub retained_frames: Range<usize>,
    /// Token periods until the chunk's own last token was available.
    pub ready_at_tokens: usize,
    /// Token periods until its frames were emitted.
    pub emitted_at_tokens: usize,
    pub ready_at_s: f64,
    pub emitted_at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub total_tokens: usize,
    pub lookahead: usize,
    pub chunks: Vec<ChunkEmission>,
    pub retained_frames: usize,
    /// Extra delay of the first chunk caused by waiting for look-ahead.
    pub first_chunk_delay_s: f64,
    /// SHA-256 over the emitted frames, in order.
    pub checksum: String,
}

/// A stream that stopped at a failing chunk. The report lists the chunks
/// emitted before the failure.
#[derive(Debug)]
pub struct StreamAbort {
    pub failed_chunk: usize,
    pub report: Box<StreamReport>,
    pub error: Error,
}

pub type StreamResult = std::result::Result<StreamReport, StreamAbort>;

impl std::fmt::Display for StreamAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "stream aborted at chunk {} after {} chunks: {}",
            self.failed_chunk,
            self.report.chunks.len(),
            self.error
        )
    }
}

impl std::error::Error for StreamAbort {}

impl From<StreamAbort> for Error {
    fn from(abort: StreamAbort) -> Self {
        abort.error
    }
}

pub(crate) fn frame_checksum<'a>(frames: impl IntoIterator<Item = &'a MelFrame>) -> String {
    let mut h = Sha256::new();
    for frame in frames {
        for v in frame {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Streams `tokens` through `decoder` using fixed-size plans from `cfg`.
pub fn run_stream(
    tokens: &TokenStream,
    cfg: &StreamConfig,
    decoder: &dyn MelDecoder,
    sink: &mut dyn FrameSink,
) -> StreamResult {
    let plans = plan_chunks(tokens.len(), cfg);
    run_planned(tokens.tokens(), &plans, cfg.lookahead, decoder, sink)
}

/// Streams `tokens` chunk by chunk following `plans`. `lookahead` is the
/// configured window the scheduler waits for after each chunk.
pub fn run_planned(
    tokens: &[u32],
    plans: &[ChunkPlan],
    lookahead: usize,
    decoder: &dyn MelDecoder,
    sink: &mut dyn FrameSink,
) -> StreamResult {
    let mut report = StreamReport {
        total_tokens: tokens.len(),
        lookahead,
        chunks: Vec::with_capacity(plans.len()),
        retained_frames: 0,
        first_chunk_delay_s: 0.0,
        checksum: String::new(),
    };
    let mut decoded: Vec<(Range<usize>, Vec<MelFrame>)> = Vec::with_capacity(plans.len());
    let mut hasher = Sha256::new();

    for plan in plans {
        let step = || -> Result<Vec<MelFrame>> {
            if plan.visible_tokens.end > tokens.len() {
                return Err(Error::contract(format!(
                    "plan {} reaches token {} of a {}-token stream",
                    plan.index,
                    plan.visible_tokens.end,
                    tokens.len()
                )));
            }
            let prompt: Vec<PromptChunk<'_>> = decoded
                .iter()
                .map(|(r, f)| PromptChunk { tokens: &tokens[r.clone()], frames: f })
                .collect();
            let condition = &tokens[plan.token_range.start..plan.token_range.end + plan.lookahead];
            let mut frames = decoder.decode(&prompt, condition)?;
            if frames.len() != tokens_to_mel_frames(condition.len()) {
                return Err(Error::backend(
                    "decoder",
                    format!("returned {} frames for {} condition tokens", frames.len(), condition.len()),
                ));
            }
            frames.truncate(plan.retained_frames.len());
            Ok(frames)
        };
        let frames = match step() {
            Ok(f) => f,
            Err(error) => {
                report.checksum = hex::encode(hasher.finalize());
                return Err(StreamAbort { failed_chunk: plan.index, report: Box::new(report), error });
            }
        };
        for frame in &frames {
            for v in frame {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        let block = MelBlock { chunk: plan.index, frame_range: plan.retained_frames.clone(), frames: frames.clone() };
        if let Err(error) = sink.push(block) {
            report.checksum = hex::encode(hasher.finalize());
            return Err(StreamAbort { failed_chunk: plan.index, report: Box::new(report), error });
        }

        let ready = plan.token_range.end;
        let emitted = ready + lookahead;
        report.chunks.push(ChunkEmission {
            index: plan.index,
            token_range: plan.token_range.clone(),
            lookahead: plan.lookahead,
            retained_frames: plan.retained_frames.clone(),
            ready_at_tokens: ready,
            emitted_at_tokens: emitted,
            ready_at_s: tokens_to_seconds(ready),
            emitted_at_s: tokens_to_seconds(emitted),
        });
        report.retained_frames += frames.len();
        decoded.push((plan.token_range.clone(), frames));
    }
    if let Some(first) = report.chunks.first() {
        report.first_chunk_delay_s = tokens_to_seconds(first.emitted_at_tokens - first.ready_at_tokens);
    }
    report.checksum = hex::encode(hasher.finalize());
    Ok(report)
}

/// Deterministic stand-in decoder: every frame of a call is a hash of all
/// visible tokens (prompt and condition) and the frame's global index.
#[derive(Debug, Clone)]
pub struct HashMelDecoder {
    pub dim: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fold_token(h: u64, token: u32) -> u64 {
    token.to_le_bytes().iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl HashMelDecoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// Hash state after folding in `tokens`.
    pub fn prefix_hash(tokens: &[u32]) -> u64 {
        tokens.iter().fold(FNV_OFFSET, |h, &t| fold_token(h, t))
    }

    /// Hash state after each prefix: entry `k` covers `tokens[..k]`.
    pub fn prefix_hashes(tokens: &[u32]) -> Vec<u64> {
        let mut out = Vec::with_capacity(tokens.len() + 1);
        let mut h = FNV_OFFSET;
        out.push(h);
        for &t in tokens {
            h = fold_token(h, t);
            out.push(h);
        }
        out
    }

    /// The frame at global index `frame` given the hash of the visible tokens.
    pub fn frame(&self, visible_hash: u64, frame: usize) -> MelFrame {
        (0..self.dim)
            .map(|d| {
                let bits = splitmix(visible_hash ^ splitmix(frame as u64) ^ ((d as u64) << 56));
                (bits >> 40) as f32 / (1u64 << 24) as f32
            })
            .collect()
    }
}

impl MelDecoder for HashMelDecoder {
    fn decode(&self, prompt: &[PromptChunk<'_>], condition: &[u32]) -> Result<Vec<MelFrame>> {
        let mut h = FNV_OFFSET;
        let mut prompt_tokens = 0;
        for chunk in prompt {
            if chunk.frames.len() != tokens_to_mel_frames(chunk.tokens.len()) {
                return Err(Error::contract("prompt chunk frames do not match its tokens"));
            }
            h = chunk.tokens.iter().fold(h, |h, &t| fold_token(h, t));
            prompt_tokens += chunk.tokens.len();
        }
        h = condition.iter().fold(h, |h, &t| fold_token(h, t));
        let base = tokens_to_mel_frames(prompt_tokens);
        Ok((0..tokens_to_mel_frames(condition.len())).map(|f| self.frame(h, base + f)).collect())
    }
}

/// One-shot offline evaluation of the hash decoder: frame `q` sees the keys
/// its block-causal mask row allows, widened by its chunk's look-ahead.
pub fn offline_hash_frames(tokens: &[u32], plans: &[ChunkPlan], decoder: &HashMelDecoder) -> Vec<MelFrame> {
    let sizes: Vec<usize> = plans.iter().map(|p| tokens_to_mel_frames(p.token_range.len())).collect();
    let mask = build_block_causal_mask(&sizes);
    let prefixes = HashMelDecoder::prefix_hashes(tokens);
    let mut out = Vec::with_capacity(mask.len());
    let mut row_end = 0;
    for q in 0..mask.len() {
        // rows only change at chunk starts
        if q == 0 || mask.chunk_of(q) != mask.chunk_of(q - 1) {
            row_end = visible_prefix(&mask, q);
        }
        let lookahead = plans[mask.chunk_of(q)].lookahead;
        let visible_tokens = row_end / MEL_FRAMES_PER_TOKEN + lookahead;
        out.push(decoder.frame(prefixes[visible_tokens], q));
    }
    out
}

fn visible_prefix(mask: &BlockCausalMask, q: usize) -> usize {
    let (mut lo, mut hi) = (0, mask.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if mask.get(q, mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}
