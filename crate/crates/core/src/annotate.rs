//! Segment annotation: language routing, pause-based punctuation for
//! character-timestamped transcripts, and the original/enhanced audio choice.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{secs_to_ms, Language, Segment, TimeSpan};
use crate::error::{Error, Result};

/// Detects the spoken language of a span. `None` means no language was found.
pub trait LanguageIdBackend: Send + Sync {
    fn detect(&self, asset: &str, span: TimeSpan) -> Result<Option<Language>>;
}

/// Transcribes a span in a given language.
pub trait TranscriptionBackend: Send + Sync {
    fn transcribe(&self, asset: &str, span: TimeSpan, language: &Language) -> Result<Transcription>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transcription {
    /// Character-level output with onsets and no punctuation.
    Timed(Vec<TimedChar>),
    /// Already punctuated text.
    Plain(String),
}

/// One transcribed character with its onset time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedChar {
    pub text: String,
    pub onset_ms: u64,
}

impl TimedChar {
    pub fn new(text: impl Into<String>, onset_secs: f64) -> Self {
        Self {
            text: text.into(),
            onset_ms: secs_to_ms(onset_secs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementChoice {
    Original,
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatePolicy {
    /// Gaps strictly above this and below `period_min_s` get a comma.
    pub comma_min_s: f64,
    /// Gaps at or above this get a period.
    pub period_min_s: f64,
    pub comma_mark: String,
    pub period_mark: String,
    pub keep_languages: Vec<Language>,
    /// Probability of keeping the original (unenhanced) audio.
    pub original_ratio: f64,
}

impl Default for AnnotatePolicy {
    fn default() -> Self {
        Self {
            comma_min_s: 0.5,
            period_min_s: 1.0,
            comma_mark: "，".into(),
            period_mark: "。".into(),
            keep_languages: vec![Language::En, Language::Zh],
            original_ratio: 0.5,
        }
    }
}

impl AnnotatePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.comma_min_s && self.comma_min_s < self.period_min_s) {
            return Err(Error::config("comma band must lie below the period threshold"));
        }
        if !(0.0..=1.0).contains(&self.original_ratio) {
            return Err(Error::config("original_ratio must be a probability"));
        }
        Ok(())
    }

    fn comma_min_ms(&self) -> u64 {
        secs_to_ms(self.comma_min_s)
    }

    fn period_min_ms(&self) -> u64 {
        secs_to_ms(self.period_min_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    NoLanguage,
    UnsupportedLanguage(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    Transcribe(Language),
    Discard(DiscardReason),
}

pub fn route_language(tag: Option<&Language>, policy: &AnnotatePolicy) -> Route {
    match tag {
        None => Route::Discard(DiscardReason::NoLanguage),
        Some(lang) if policy.keep_languages.contains(lang) => Route::Transcribe(lang.clone()),
        Some(lang) => Route::Discard(DiscardReason::UnsupportedLanguage(lang.to_string())),
    }
}

/// Joins characters, inserting a comma for pauses inside the comma band and a
/// period for pauses at or past the period threshold. Gaps are onset to onset.
pub fn insert_punctuation(chars: &[TimedChar], policy: &AnnotatePolicy) -> Result<String> {
    if chars.is_empty() {
        return Err(Error::contract("punctuation needs at least one character"));
    }
    let (comma_min, period_min) = (policy.comma_min_ms(), policy.period_min_ms());
    let mut out = String::new();
    for (i, c) in chars.iter().enumerate() {
        if i > 0 {
            let prev = chars[i - 1].onset_ms;
            if c.onset_ms < prev {
                return Err(Error::contract(format!(
                    "character onsets not sorted at index {i}: {} ms after {prev} ms",
                    c.onset_ms
                )));
            }
            let gap = c.onset_ms - prev;
            if gap >= period_min {
                out.push_str(&policy.period_mark);
            } else if gap > comma_min {
                out.push_str(&policy.comma_mark);
            }
        }
        out.push_str(&c.text);
    }
    Ok(out)
}

/// Draws the original/enhanced choice for one segment.
pub fn select_enhancement<R: Rng + ?Sized>(rng: &mut R, policy: &AnnotatePolicy) -> EnhancementChoice {
    if rng.gen_bool(policy.original_ratio) {
        EnhancementChoice::Original
    } else {
        EnhancementChoice::Enhanced
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotateReport {
    pub transcribed: usize,
    pub discarded: usize,
    pub failed: usize,
}

/// Annotates one segment in place: language, transcript when the language is
/// kept, and the enhancement choice. Backend failures leave the transcript
/// empty and count as `failed`.
pub fn annotate_segment<R: Rng + ?Sized>(
    seg: &mut Segment,
    langid: &dyn LanguageIdBackend,
    transcriber: &dyn TranscriptionBackend,
    rng: &mut R,
    policy: &AnnotatePolicy,
    report: &mut AnnotateReport,
) {
    seg.enhancement = Some(select_enhancement(rng, policy));
    let detected = match langid.detect(&seg.source, seg.span) {
        Ok(d) => d,
        Err(_) => {
            report.failed += 1;
            return;
        }
    };
    seg.language = detected.clone();
    match route_language(detected.as_ref(), policy) {
        Route::Discard(_) => report.discarded += 1,
        Route::Transcribe(lang) => {
            let text = transcriber
                .transcribe(&seg.source, seg.span, &lang)
                .and_then(|t| match t {
                    Transcription::Plain(text) => Ok(text),
                    Transcription::Timed(chars) => insert_punctuation(&chars, policy),
                });
            match text {
                Ok(text) => {
                    seg.transcript = Some(text);
                    report.transcribed += 1;
                }
                Err(_) => report.failed += 1,
            }
        }
    }
}

/// Deterministic stand-in for an ASR backend. Mandarin output is a timed
/// character list with pauses spread across the comma and period bands;
/// English output is plain punctuated text.
#[derive(Debug, Clone, Default)]
pub struct SyntheticTranscriber;

const ZH_CHARS: &[&str] = &[
    "我", "们", "今", "天", "说", "话", "音", "频", "数", "据", "模", "型", "好", "的", "人", "在",
];
const EN_WORDS: &[&str] = &[
    "the", "audio", "model", "speaks", "today", "about", "data", "and", "voice", "clearly",
];
/// Candidate onset gaps in ms: none, comma band, period band.
const GAPS_MS: &[u64] = &[180, 240, 320, 700, 1200];

fn span_digest(asset: &str, span: TimeSpan) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(asset.as_bytes());
    h.update(span.start_ms().to_le_bytes());
    h.update(span.end_ms().to_le_bytes());
    h.finalize().into()
}

impl TranscriptionBackend for SyntheticTranscriber {
    fn transcribe(&self, asset: &str, span: TimeSpan, language: &Language) -> Result<Transcription> {
        let digest = span_digest(asset, span);
        let byte = |i: usize| digest[i % digest.len()] as usize;
        match language {
            Language::Zh => {
                let mut chars = Vec::new();
                let mut onset = span.start_ms();
                let mut i = 0;
                while onset < span.end_ms() {
                    chars.push(TimedChar {
                        text: ZH_CHARS[byte(i) % ZH_CHARS.len()].to_string(),
                        onset_ms: onset,
                    });
                    onset += GAPS_MS[byte(i + 7) % GAPS_MS.len()];
                    i += 1;
                }
                Ok(Transcription::Timed(chars))
            }
            _ => {
                let n_words = (span.duration_ms() / 400).max(1) as usize;
                let words: Vec<&str> = (0..n_words).map(|i| EN_WORDS[byte(i) % EN_WORDS.len()]).collect();
                Ok(Transcription::Plain(format!("{}.", words.join(" "))))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn chars(onsets: &[f64]) -> Vec<TimedChar> {
        onsets
            .iter()
            .enumerate()
            .map(|(i, &t)| TimedChar::new(((b'a' + i as u8) as char).to_string(), t))
            .collect()
    }

    #[test]
    fn routing() {
        let p = AnnotatePolicy::default();
        assert_eq!(route_language(Some(&"en".into()), &p), Route::Transcribe(Language::En));
        assert_eq!(route_language(Some(&"zh".into()), &p), Route::Transcribe(Language::Zh));
        assert_eq!(
            route_language(Some(&"fr".into()), &p),
            Route::Discard(DiscardReason::UnsupportedLanguage("fr".into()))
        );
        assert_eq!(route_language(None, &p), Route::Discard(DiscardReason::NoLanguage));
    }

    #[test]
    fn punctuation_examples() {
        let p = AnnotatePolicy::default();
        assert_eq!(insert_punctuation(&chars(&[0.0, 0.3]), &p).unwrap(), "ab");
        assert_eq!(insert_punctuation(&chars(&[0.0, 0.7]), &p).unwrap(), "a，b");
        assert_eq!(insert_punctuation(&chars(&[0.0, 1.2]), &p).unwrap(), "a。b");
        // band edges: 0.5 is not a comma, 1.0 is a period
        assert_eq!(insert_punctuation(&chars(&[0.0, 0.5]), &p).unwrap(), "ab");
        assert_eq!(insert_punctuation(&chars(&[0.0, 1.0]), &p).unwrap(), "a。b");
        assert_eq!(insert_punctuation(&chars(&[0.0, 0.501]), &p).unwrap(), "a，b");
    }

    #[test]
    fn punctuation_errors() {
        let p = AnnotatePolicy::default();
        assert!(matches!(insert_punctuation(&[], &p), Err(Error::Contract(_))));
        assert!(matches!(insert_punctuation(&chars(&[1.0, 0.5]), &p), Err(Error::Contract(_))));
    }

    #[test]
    fn enhancement_is_reproducible() {
        let p = AnnotatePolicy::default();
        let draw = |seed| {
            let mut rng = seeded(seed);
            (0..4).map(|_| select_enhancement(&mut rng, &p)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn enhancement_ratio_is_balanced() {
        let p = AnnotatePolicy::default();
        assert_eq!(p.original_ratio, 0.5);
        let mut rng = seeded(42);
        let n = 100_000;
        let originals = (0..n)
            .filter(|_| select_enhancement(&mut rng, &p) == EnhancementChoice::Original)
            .count();
        let frac = originals as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn synthetic_transcriber_is_deterministic() {
        let span = TimeSpan::from_millis(1000, 6000).unwrap();
        let t = SyntheticTranscriber;
        let a = t.transcribe("x", span, &Language::Zh).unwrap();
        assert_eq!(a, t.transcribe("x", span, &Language::Zh).unwrap());
        let Transcription::Timed(chars) = a else { panic!("zh yields timed chars") };
        assert!(chars.windows(2).all(|w| w[0].onset_ms <= w[1].onset_ms));
    }

    proptest! {
        #[test]
        fn punctuation_counts_and_content(gaps in prop::collection::vec(0u64..2000, 0..40)) {
            let p = AnnotatePolicy::default();
            let mut onset = 0;
            let mut cs = vec![TimedChar { text: "x".into(), onset_ms: 0 }];
            for (i, g) in gaps.iter().enumerate() {
                onset += g;
                cs.push(TimedChar { text: ((b'a' + (i % 26) as u8) as char).to_string(), onset_ms: onset });
            }
            let out = insert_punctuation(&cs, &p).unwrap();
            let commas = out.matches('，').count();
            let periods = out.matches('。').count();
            prop_assert_eq!(commas, gaps.iter().filter(|&&g| g > 500 && g < 1000).count());
            prop_assert_eq!(periods, gaps.iter().filter(|&&g| g >= 1000).count());
            let stripped: String = out.chars().filter(|&c| c != '，' && c != '。').collect();
            let joined: String = cs.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(stripped, joined);
        }
    }
}
