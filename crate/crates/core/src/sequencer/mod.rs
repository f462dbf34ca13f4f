//! Training-sequence construction: stream alignment, audio delay, the seven
//! pre-training task layouts, weighted task sampling, SFT examples, and the
//! `KAFSEQ1` container they are stored in.

mod align;
pub mod container;
mod mixer;
mod sft;
mod task;

pub use align::{align_streams, apply_delay, AlignedPair, DEFAULT_AUDIO_DELAY};
pub use mixer::{TaskMixer, TaskWeights};
pub use sft::{
    build_sft_example, InstructionModality, InstructionPools, Instruction, SftDatum, SftExample,
    SftResponse, SftTask, ASR_POOL_SIZE, INSTRUCTION_SEGMENT, OTHER_POOL_SIZE, RESPONSE_SEGMENT,
    USER_AUDIO_SEGMENT,
};
pub use task::{
    build_task_sequence, Element, InputMode, InterleaveLayout, Position, RecoveredSegment,
    SequenceLabel, SequenceOptions, TaskKind, TaskSequence,
};
