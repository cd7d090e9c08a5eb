//! Number recognition in short answer spans and article text.
//!
//! Digit strings may use Western (`531,814`) or Indian (`5,31,814`) comma
//! grouping. English number words are recognized up to ninety-nine, in
//! hyphenated (`forty-six`) or spaced (`forty six`) form.

use std::sync::OnceLock;

use regex::Regex;

const UNITS: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z][A-Za-z0-9]*(?:-[A-Za-z0-9]+)*|\d+(?:,\d+)*(?:\.\d+)?").unwrap())
}

fn unit_value(word: &str) -> Option<u64> {
    UNITS.iter().position(|u| *u == word).map(|p| p as u64)
}

fn tens_value(word: &str) -> Option<u64> {
    TENS.iter().position(|t| *t == word).map(|p| 20 + 10 * p as u64)
}

fn word_value(word: &str) -> Option<u64> {
    let word = word.to_ascii_lowercase();
    if let Some(v) = unit_value(&word).or_else(|| tens_value(&word)) {
        return Some(v);
    }
    let (tens, unit) = word.split_once('-')?;
    match (tens_value(tens), unit_value(unit)) {
        (Some(t), Some(u)) if (1..10).contains(&u) => Some(t + u),
        _ => None,
    }
}

fn digit_value(token: &str) -> Option<u64> {
    if token.contains('.') {
        // fractional values are not counts
        return None;
    }
    token.replace(',', "").parse().ok()
}

/// Every number in `text`, in order of appearance.
pub fn find_numbers(text: &str) -> Vec<u64> {
    let tokens: Vec<&str> = token_re().find_iter(text).map(|m| m.as_str()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let token = tokens[i];
        if token.as_bytes()[0].is_ascii_digit() {
            out.extend(digit_value(token));
            i += 1;
            continue;
        }
        let lower = token.to_ascii_lowercase();
        if let Some(t) = tens_value(&lower) {
            // "forty six"
            if let Some(u) = tokens.get(i + 1).and_then(|n| unit_value(&n.to_ascii_lowercase())) {
                if (1..10).contains(&u) {
                    out.push(t + u);
                    i += 2;
                    continue;
                }
            }
        }
        out.extend(word_value(&lower));
        i += 1;
    }
    out
}

/// First number in a span, if any.
pub fn parse_number(span: &str) -> Option<u64> {
    find_numbers(span).into_iter().next()
}
