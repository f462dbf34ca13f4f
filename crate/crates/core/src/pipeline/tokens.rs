//! Stand-in tokenizers for batch runs: semantic tokens are a pseudo-random
//! function of the asset and span, text is tokenized byte-wise.

use rand::Rng;

use crate::domain::{TimeSpan, TokenStream};
use crate::error::{Error, Result};
use crate::frames::ms_to_tokens;
use crate::rng::derived;

/// One token per 80 ms of audio, at least one.
pub fn semantic_tokens(asset: &str, span: TimeSpan, audio_blank: u32) -> Result<TokenStream> {
    let n = ms_to_tokens(span.duration_ms()).max(1);
    let mut rng = derived(0, &format!("semantic/{asset}/{}/{}", span.start_ms(), span.end_ms()));
    TokenStream::semantic((0..n).map(|_| rng.gen_range(0..audio_blank)).collect(), audio_blank)
}

/// UTF-8 bytes of `text` as token ids.
pub fn text_tokens(text: &str, text_blank: u32) -> Result<TokenStream> {
    if text_blank < 256 {
        return Err(Error::config("byte-level text needs a text blank of at least 256"));
    }
    TokenStream::text(text.bytes().map(u32::from).collect(), text_blank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semantic_length_follows_token_rate() {
        let s = semantic_tokens("a", TimeSpan::from_millis(0, 2000).unwrap(), 4096).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s, semantic_tokens("a", TimeSpan::from_millis(0, 2000).unwrap(), 4096).unwrap());
        assert_eq!(semantic_tokens("a", TimeSpan::from_millis(0, 10).unwrap(), 4096).unwrap().len(), 1);
    }

    #[test]
    fn text_is_bytes() {
        assert_eq!(text_tokens("hi", 256).unwrap().tokens(), &[104, 105]);
        assert_eq!(text_tokens("你", 256).unwrap().len(), 3);
    }
}
