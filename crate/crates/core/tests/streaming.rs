use kaf_core::pipeline::{self, simulate_stream, RunConfig};
use kaf_core::rng::seeded;
use kaf_core::stream::{
    offline_hash_frames, plan_from_sizes, run_planned, HashMelDecoder, MelBlock, MelDecoder, PromptChunk,
};
use kaf_core::{Error, Result};
use proptest::prelude::*;
use rand::Rng;

fn cfg(chunk: usize, lookahead: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.stream.chunk_tokens = chunk;
    cfg.stream.lookahead = lookahead;
    cfg
}

#[test]
fn one_second_chunks_over_two_seconds() {
    let tokens: Vec<u32> = (0..24).collect();
    let r = simulate_stream(&tokens, &cfg(12, 4)).unwrap();
    assert_eq!(r.chunk_sizes, vec![12, 12]);
    assert_eq!(r.stream.retained_frames, 96);
    assert_eq!(r.stream.first_chunk_delay_s, 0.32);
    assert!(r.matches_offline);
    assert_eq!(r.stream.chunks[0].lookahead, 4);
    assert_eq!(r.stream.chunks[1].lookahead, 0);
    assert_eq!(r.stream.chunks[1].emitted_at_tokens, 28);
}

#[test]
fn lookahead_moves_latency_not_frame_count() {
    let tokens: Vec<u32> = (0..50).map(|t| t * 7).collect();
    let without = simulate_stream(&tokens, &cfg(12, 0)).unwrap();
    let with = simulate_stream(&tokens, &cfg(12, 4)).unwrap();
    assert_eq!(without.stream.retained_frames, with.stream.retained_frames);
    assert_eq!(without.stream.first_chunk_delay_s, 0.0);
    assert_eq!(with.stream.first_chunk_delay_s, 4.0 / 12.5);
    // look-ahead changes what the decoder sees, hence the frames
    assert_ne!(without.stream.checksum, with.stream.checksum);
    assert!(without.matches_offline && with.matches_offline);
}

#[test]
fn dynamic_chunking_is_seeded() {
    let tokens: Vec<u32> = (0..300).collect();
    let mut c = cfg(12, 4);
    c.stream.dynamic = true;
    let a = simulate_stream(&tokens, &c).unwrap();
    assert_eq!(a, simulate_stream(&tokens, &c).unwrap());
    assert!(a.chunk_sizes[..a.chunk_sizes.len() - 1].iter().all(|s| (7..=37).contains(s)));
    assert_eq!(a.chunk_sizes.iter().sum::<usize>(), 300);
    c.seed = 1;
    assert_ne!(a.chunk_sizes, simulate_stream(&tokens, &c).unwrap().chunk_sizes);
}

#[test]
fn empty_token_file_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    std::fs::write(&path, "\n").unwrap();
    let r = pipeline::cmd_simulate_stream(&path, &RunConfig::default()).unwrap();
    assert!(r.chunk_sizes.is_empty() && r.stream.chunks.is_empty());
    assert_eq!(r.stream.retained_frames, 0);
    assert!(r.matches_offline);
}

#[test]
fn token_files_accept_lists_and_arrays() {
    assert_eq!(pipeline::parse_token_text("1 2,3\n4").unwrap(), vec![1, 2, 3, 4]);
    assert_eq!(pipeline::parse_token_text("[5, 6]").unwrap(), vec![5, 6]);
    assert!(matches!(pipeline::parse_token_text("1 x"), Err(Error::Contract(_))));
}

/// Fails on its `k`-th call.
struct FailingDecoder {
    inner: HashMelDecoder,
    fail_at: usize,
    calls: std::sync::atomic::AtomicUsize,
}

impl MelDecoder for FailingDecoder {
    fn decode(&self, prompt: &[PromptChunk<'_>], condition: &[u32]) -> Result<Vec<Vec<f32>>> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if n == self.fail_at {
            return Err(Error::backend("decoder", "out of memory"));
        }
        self.inner.decode(prompt, condition)
    }
}

#[test]
fn failing_chunk_keeps_earlier_frames() {
    let tokens: Vec<u32> = (0..40).collect();
    let plans = plan_from_sizes(40, &[10, 10, 10, 10], 3).unwrap();
    let dec = FailingDecoder { inner: HashMelDecoder::new(4), fail_at: 2, calls: Default::default() };
    let mut sink: Vec<MelBlock> = Vec::new();
    let abort = run_planned(&tokens, &plans, 3, &dec, &mut sink).unwrap_err();
    assert_eq!(abort.failed_chunk, 2);
    assert_eq!(abort.report.chunks.len(), 2);
    assert_eq!(sink.iter().map(|b| b.frames.len()).sum::<usize>(), 80);
    let offline = offline_hash_frames(&tokens, &plans, &HashMelDecoder::new(4));
    let streamed: Vec<Vec<f32>> = sink.into_iter().flat_map(|b| b.frames).collect();
    assert_eq!(streamed, offline[..80]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streamed_frames_equal_offline(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let total = rng.gen_range(1..=200);
        let n = rng.gen_range(0..=8);
        let mut sizes = Vec::new();
        let mut left = total;
        while left > 0 {
            let s = rng.gen_range(1..=left.min(37));
            sizes.push(s);
            left -= s;
        }
        let tokens: Vec<u32> = (0..total).map(|_| rng.gen_range(0..4096)).collect();
        let plans = plan_from_sizes(total, &sizes, n).unwrap();
        let dec = HashMelDecoder::new(3);
        let mut sink: Vec<MelBlock> = Vec::new();
        let report = run_planned(&tokens, &plans, n, &dec, &mut sink).unwrap();
        let streamed: Vec<u32> = sink.iter().flat_map(|b| b.frames.iter().flatten().map(|v| v.to_bits())).collect();
        let offline: Vec<u32> = offline_hash_frames(&tokens, &plans, &dec).iter().flatten().map(|v| v.to_bits()).collect();
        prop_assert_eq!(streamed, offline);
        prop_assert_eq!(report.retained_frames, 4 * total);
        prop_assert_eq!(report.first_chunk_delay_s, n as f64 / 12.5);
    }
}
