//! Streams 60 semantic tokens through the hash decoder with and without
//! look-ahead and compares against the one-shot block-causal computation.
//!
//! cargo run --example streaming_detokenizer

use std::sync::mpsc;

use kaf_core::domain::TokenStream;
use kaf_core::stream::{
    build_block_causal_mask, offline_hash_frames, plan_chunks, run_stream, HashMelDecoder, MelBlock, StreamConfig,
};

fn main() -> kaf_core::Result<()> {
    let tokens = TokenStream::semantic((0..60).map(|t| (t * 37) % 4096).collect(), 4096)?;
    let decoder = HashMelDecoder::new(8);

    for lookahead in [0, 4] {
        let cfg = StreamConfig { lookahead, ..StreamConfig::default() };
        let (tx, rx) = mpsc::channel::<MelBlock>();
        let mut sink = tx;
        let report = run_stream(&tokens, &cfg, &decoder, &mut sink)?;
        drop(sink);
        let streamed: Vec<Vec<f32>> = rx.iter().flat_map(|b| b.frames).collect();
        let offline = offline_hash_frames(tokens.tokens(), &plan_chunks(tokens.len(), &cfg), &decoder);
        println!(
            "look-ahead {lookahead}: {} chunks, {} frames, first chunk {:.2} s late, offline match {}",
            report.chunks.len(),
            report.retained_frames,
            report.first_chunk_delay_s,
            streamed == offline
        );
        for c in &report.chunks {
            println!(
                "  chunk {} tokens {:?} ready {:.2} s emitted {:.2} s",
                c.index, c.token_range, c.ready_at_s, c.emitted_at_s
            );
        }
    }

    let mask = build_block_causal_mask(&[2, 3, 1]);
    println!("\nblock-causal mask over chunks of 2, 3 and 1 frames:");
    for row in mask.to_dense() {
        println!("  {}", row.iter().map(|&b| if b { '1' } else { '.' }).collect::<String>());
    }
    Ok(())
}
