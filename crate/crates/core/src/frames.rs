//! Frame-rate arithmetic between semantic tokens and mel frames.

/// Semantic audio tokens per second.
pub const SEMANTIC_RATE_HZ: f64 = 12.5;
/// Mel-spectrogram frames per second produced by the detokenizer.
pub const MEL_RATE_HZ: f64 = 50.0;
/// Mel frames covered by one semantic token.
pub const MEL_FRAMES_PER_TOKEN: usize = 4;
/// Duration of one semantic token in milliseconds.
pub const TOKEN_PERIOD_MS: u64 = 80;

pub fn tokens_to_mel_frames(n_tokens: usize) -> usize {
    MEL_FRAMES_PER_TOKEN * n_tokens
}

pub fn tokens_to_seconds(n_tokens: usize) -> f64 {
    n_tokens as f64 / SEMANTIC_RATE_HZ
}

/// Number of whole semantic tokens in `ms` milliseconds of audio.
pub fn ms_to_tokens(ms: u64) -> usize {
    (ms / TOKEN_PERIOD_MS) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mel_frame_examples() {
        assert_eq!(tokens_to_mel_frames(0), 0);
        assert_eq!(tokens_to_mel_frames(25), 100);
        assert_eq!(tokens_to_mel_frames(13), 52);
        assert_eq!(MEL_RATE_HZ / SEMANTIC_RATE_HZ, MEL_FRAMES_PER_TOKEN as f64);
    }

    #[test]
    fn seconds_examples() {
        assert_eq!(tokens_to_seconds(0), 0.0);
        assert_eq!(tokens_to_seconds(25), 2.0);
        assert!((tokens_to_seconds(4) - 0.32).abs() < 1e-12);
        assert_eq!(ms_to_tokens(1000), 12);
    }

    proptest! {
        #[test]
        fn mel_frames_additive(m in 0usize..100_000, n in 0usize..100_000) {
            prop_assert_eq!(tokens_to_mel_frames(m + n), tokens_to_mel_frames(m) + tokens_to_mel_frames(n));
        }
    }
}
