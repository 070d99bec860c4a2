//! Word counting and capping shared by the corpus, generation and evaluation.

/// Default cap on explanation length, in whitespace-delimited words.
pub const MAX_WORDS: usize = 50;

/// Number of ASCII-whitespace-delimited words.
pub fn word_count(text: &str) -> usize {
    text.split_ascii_whitespace().count()
}

/// Prefix of `text` ending after its `max` th word, trailing whitespace
/// removed. Text with at most `max` words is returned trimmed at the end only.
pub fn truncate_words(text: &str, max: usize) -> &str {
    if max == 0 {
        return "";
    }
    let bytes = text.as_bytes();
    let mut words = 0;
    let mut in_word = false;
    for (idx, &b) in bytes.iter().enumerate() {
        let ws = b.is_ascii_whitespace();
        if in_word && ws {
            words += 1;
            if words == max {
                return &text[..idx];
            }
        }
        in_word = !ws;
    }
    text.trim_end_matches(|c: char| c.is_ascii_whitespace())
}
