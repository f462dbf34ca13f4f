//! Turns character onsets into a punctuated transcript and shows how the
//! language filter routes segments.
//!
//! cargo run --example punctuate_transcript

use kaf_core::annotate::{insert_punctuation, route_language, AnnotatePolicy, Route, TimedChar};
use kaf_core::domain::Language;

fn main() -> kaf_core::Result<()> {
    let policy = AnnotatePolicy::default();
    // pauses of 0.3 s, 0.7 s (comma), 1.0 s (period) and 0.5 s (nothing)
    let onsets = [("今", 0.0), ("天", 0.3), ("我", 1.0), ("们", 2.0), ("说", 2.5)];
    let chars: Vec<TimedChar> = onsets.iter().map(|&(c, t)| TimedChar::new(c, t)).collect();
    println!("{}", insert_punctuation(&chars, &policy)?);

    for tag in [Some(Language::Zh), Some(Language::En), Some(Language::Other("fr".into())), None] {
        let verdict = match route_language(tag.as_ref(), &policy) {
            Route::Transcribe(lang) => format!("transcribe as {lang}"),
            Route::Discard(reason) => format!("discard ({reason:?})"),
        };
        println!("{:<6} {verdict}", tag.map_or("none".to_owned(), |l| l.to_string()));
    }
    Ok(())
}
