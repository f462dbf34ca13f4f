//! Lays out two toy segments in every pre-training task format, then draws
//! task kinds from the weighted mixer.
//!
//! cargo run --example pretrain_sequences

use std::collections::BTreeMap;

use kaf_core::domain::TokenStream;
use kaf_core::sequencer::{
    align_streams, build_task_sequence, InterleaveLayout, SequenceOptions, TaskKind, TaskMixer, TaskWeights,
};

const AUDIO_BLANK: u32 = 4096;
const TEXT_BLANK: u32 = 256;

fn main() -> kaf_core::Result<()> {
    let segments = [
        (vec![11, 12, 13, 14], b"hi".to_vec()),
        (vec![21, 22], b"yes".to_vec()),
        (vec![31, 32, 33], b"ok".to_vec()),
    ];
    let pairs = segments
        .iter()
        .map(|(audio, text)| {
            let audio = TokenStream::semantic(audio.clone(), AUDIO_BLANK)?;
            let text = TokenStream::text(text.iter().map(|&b| b as u32).collect(), TEXT_BLANK)?;
            align_streams(&audio, &text)
        })
        .collect::<kaf_core::Result<Vec<_>>>()?;

    for kind in TaskKind::ALL {
        let (n, layout) = if kind.is_interleaving() {
            (3, InterleaveLayout { leading_target: false, trailing_context: true })
        } else {
            (2, InterleaveLayout::default())
        };
        let opts = SequenceOptions { layout, ..Default::default() };
        let seq = build_task_sequence(kind, &pairs[..n], &opts)?;
        let loss = seq.loss_mask_audio.iter().zip(&seq.loss_mask_text).filter(|(a, t)| **a || **t).count();
        println!("{:<24} {:<22} {:>3} positions, {:>2} with loss", kind.name(), seq.pattern(), seq.len(), loss);
    }

    let mut mixer = TaskMixer::new(TaskWeights::default(), 7)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for _ in 0..14_000 {
        *counts.entry(mixer.sample_task().name()).or_default() += 1;
    }
    println!("\n14000 draws: {counts:?}");
    Ok(())
}
