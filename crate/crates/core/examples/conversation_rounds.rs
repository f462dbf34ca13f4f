//! Runs three conversation rounds against the mock services, with the second
//! round failing at generation, then saves and reloads the session.
//!
//! cargo run --example conversation_rounds

use kaf_core::orchestrator::{
    load_history, persist_history, AudioFrame, Backends, EchoLlm, EmptyFrameVad, FaultPlan, MemoryStore,
    Orchestrator, OrchestratorConfig, RoundOutcome, Step, WordTokenizer,
};
use kaf_core::stream::{HashMelDecoder, StreamConfig};

fn main() -> kaf_core::Result<()> {
    let vad = EmptyFrameVad;
    let tokenizer = WordTokenizer { audio_vocab: 4096 };
    let llm = EchoLlm { reply_text: b"ok".iter().map(|&b| b as u32).collect() };
    let decoder = HashMelDecoder::new(8);
    let mut faults = FaultPlan::new();
    faults.inject("demo", 1, Step::Generate);
    let backends = Backends { vad: &vad, tokenizer: &tokenizer, llm: &llm, decoder: &decoder, faults };
    let orch = Orchestrator::new(OrchestratorConfig::default(), StreamConfig::default(), backends)?;

    let mut session = orch.open("demo", vec![1, 2, 3])?;
    for turn in [vec![10, 11, 12], vec![20, 21], vec![30]] {
        for t in &turn {
            orch.feed_audio(&mut session, AudioFrame::new(WordTokenizer::encode(&[*t])))?;
        }
        orch.feed_audio(&mut session, AudioFrame::silence())?;
        match orch.run_round(&mut session) {
            Ok(RoundOutcome::Completed(r)) => {
                println!(
                    "round {}: {} in, {} out, history {} -> {}",
                    r.round,
                    r.input_tokens,
                    r.output_tokens(),
                    r.history_before,
                    r.history_after
                );
                session.listen()?;
            }
            Ok(RoundOutcome::Rejected) => println!("empty turn dropped"),
            Err(e) => {
                println!("round failed and was rolled back: {e}");
                session.recover()?;
            }
        }
    }
    println!("states: {:?}", session.trace());

    let store = MemoryStore::new();
    persist_history(&session, &store)?;
    let back = load_history("demo", &store)?;
    println!("reloaded {} history tokens, {} incident(s)", back.history().len(), back.incidents().len());
    Ok(())
}
