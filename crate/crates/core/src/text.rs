//! Tokenization and phrase spotting shared by the lexicon and gazetteer.

use std::collections::HashMap;

/// Letters, digits and combining marks of the Indic blocks.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c as u32, 0x300..=0x36F | 0x900..=0xD7F | 0x200C | 0x200D)
}

fn is_segment_break(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}' | '|' | '"' | '\n' | '\u{964}' | '\u{6D4}'
    )
}

/// Lowercased word tokens.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !is_word_char(c))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word tokens grouped into punctuation-delimited segments. Phrases never
/// match across a segment boundary.
pub fn segments(text: &str) -> Vec<Vec<String>> {
    text.split(is_segment_break)
        .map(words)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Normalized lookup key for a phrase: lowercased words joined by one space.
pub fn phrase_key(phrase: &str) -> String {
    words(phrase).join(" ")
}

/// Leftmost-longest, non-overlapping phrase matcher over word tokens.
#[derive(Debug, Clone, Default)]
pub struct PhraseMatcher {
    phrases: HashMap<Vec<String>, String>,
    max_len: usize,
}

impl PhraseMatcher {
    pub fn new<'a>(phrases: impl IntoIterator<Item = &'a str>) -> Self {
        let mut m = Self::default();
        for p in phrases {
            m.insert(p);
        }
        m
    }

    pub fn insert(&mut self, phrase: &str) {
        let tokens = words(phrase);
        if tokens.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(tokens.len());
        let key = tokens.join(" ");
        self.phrases.insert(tokens, key);
    }

    /// Keys of every matched phrase, in order of appearance.
    pub fn find(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for seg in segments(text) {
            let mut i = 0;
            while i < seg.len() {
                let longest = (1..=self.max_len.min(seg.len() - i))
                    .rev()
                    .find_map(|n| self.phrases.get(&seg[i..i + n]).map(|k| (n, k)));
                match longest {
                    Some((n, key)) => {
                        out.push(key.clone());
                        i += n;
                    }
                    None => i += 1,
                }
            }
        }
        out
    }
}
