//! Character n-gram language identification.
//!
//! A multinomial naive Bayes model over character 1- to 3-grams, trained
//! at startup from the bundled seed corpora. The dominant Unicode script
//! narrows the candidate set first: most Indic scripts belong to a single
//! supported language, and the model only has to separate languages that
//! share a script (Hindi/Marathi, Bengali/Assamese, English/other Latin,
//! Urdu/other Arabic). Unsupported languages get one profile each, all
//! labelled [`Language::Other`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::Language;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageGuess {
    pub language: Language,
    pub confidence: f64,
}

/// Anything that can name the language of a text.
pub trait LanguageIdentifier: Send + Sync {
    fn identify(&self, text: &str) -> Result<LanguageGuess, IngestError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Script {
    Latin,
    Devanagari,
    Bengali,
    Gurmukhi,
    Gujarati,
    Oriya,
    Tamil,
    Telugu,
    Kannada,
    Malayalam,
    Arabic,
    Unknown,
}

fn script_of(c: char) -> Option<Script> {
    let s = match c as u32 {
        0x41..=0x5A | 0x61..=0x7A | 0xC0..=0x24F => Script::Latin,
        0x900..=0x97F => Script::Devanagari,
        0x980..=0x9FF => Script::Bengali,
        0xA00..=0xA7F => Script::Gurmukhi,
        0xA80..=0xAFF => Script::Gujarati,
        0xB00..=0xB7F => Script::Oriya,
        0xB80..=0xBFF => Script::Tamil,
        0xC00..=0xC7F => Script::Telugu,
        0xC80..=0xCFF => Script::Kannada,
        0xD00..=0xD7F => Script::Malayalam,
        0x600..=0x6FF | 0x750..=0x77F | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF => Script::Arabic,
        _ if c.is_alphabetic() => Script::Unknown,
        _ => return None,
    };
    Some(s)
}

fn candidates(script: Script) -> &'static [Language] {
    match script {
        Script::Latin => &[Language::En, Language::Other],
        Script::Devanagari => &[Language::Hi, Language::Mr],
        Script::Bengali => &[Language::Bn, Language::As],
        Script::Gurmukhi => &[Language::Pa],
        Script::Gujarati => &[Language::Gu],
        Script::Oriya => &[Language::Or],
        Script::Tamil => &[Language::Ta],
        Script::Telugu => &[Language::Te],
        Script::Kannada => &[Language::Kn],
        Script::Malayalam => &[Language::Ml],
        Script::Arabic => &[Language::Ur, Language::Other],
        Script::Unknown => &[Language::Other],
    }
}

const SEEDS: &[(&str, Language, &str)] = &[
    ("en", Language::En, include_str!("../../assets/langid/en.txt")),
    ("hi", Language::Hi, include_str!("../../assets/langid/hi.txt")),
    ("mr", Language::Mr, include_str!("../../assets/langid/mr.txt")),
    ("bn", Language::Bn, include_str!("../../assets/langid/bn.txt")),
    ("as", Language::As, include_str!("../../assets/langid/as.txt")),
    ("pa", Language::Pa, include_str!("../../assets/langid/pa.txt")),
    ("gu", Language::Gu, include_str!("../../assets/langid/gu.txt")),
    ("or", Language::Or, include_str!("../../assets/langid/or.txt")),
    ("ta", Language::Ta, include_str!("../../assets/langid/ta.txt")),
    ("te", Language::Te, include_str!("../../assets/langid/te.txt")),
    ("kn", Language::Kn, include_str!("../../assets/langid/kn.txt")),
    ("ml", Language::Ml, include_str!("../../assets/langid/ml.txt")),
    ("ur", Language::Ur, include_str!("../../assets/langid/ur.txt")),
    ("fr", Language::Other, include_str!("../../assets/langid/other-fr.txt")),
    ("es", Language::Other, include_str!("../../assets/langid/other-es.txt")),
    ("de", Language::Other, include_str!("../../assets/langid/other-de.txt")),
    ("pt", Language::Other, include_str!("../../assets/langid/other-pt.txt")),
    ("it", Language::Other, include_str!("../../assets/langid/other-it.txt")),
    ("id", Language::Other, include_str!("../../assets/langid/other-id.txt")),
    ("ar", Language::Other, include_str!("../../assets/langid/other-ar.txt")),
];

fn ngrams(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric() && !is_mark(c)) {
        if word.is_empty() {
            continue;
        }
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once(' '))
            .collect();
        for n in 1..=3 {
            for w in padded.windows(n) {
                if n == 1 && w[0] == ' ' {
                    continue;
                }
                out.push(w.iter().collect());
            }
        }
    }
    out
}

// Indic vowel signs and viramas are combining marks, not alphanumeric.
fn is_mark(c: char) -> bool {
    matches!(c as u32, 0x900..=0xD7F) || matches!(c, '\u{200C}' | '\u{200D}')
}

// Lidstone smoothing; add-one lets corpus size dominate on short seeds.
const SMOOTHING: f64 = 0.01;

struct Profile {
    language: Language,
    counts: HashMap<String, u32>,
    total: u64,
}

impl Profile {
    fn log_likelihood(&self, grams: &[String], vocabulary: usize) -> f64 {
        let denom = self.total as f64 + SMOOTHING * vocabulary as f64;
        grams
            .iter()
            .map(|g| ((self.counts.get(g).copied().unwrap_or(0) as f64 + SMOOTHING) / denom).ln())
            .sum()
    }
}

pub struct NgramIdentifier {
    profiles: Vec<Profile>,
    vocabulary: usize,
}

impl NgramIdentifier {
    /// Trains one profile per `(label, language, corpus)`; several labels may
    /// share a language.
    pub fn train<'a>(corpora: impl IntoIterator<Item = (&'a str, Language, &'a str)>) -> Self {
        let mut by_label: Vec<(&str, Profile)> = Vec::new();
        let mut vocab = std::collections::HashSet::new();
        for (label, language, text) in corpora {
            let idx = match by_label.iter().position(|(l, _)| *l == label) {
                Some(i) => i,
                None => {
                    by_label.push((
                        label,
                        Profile {
                            language,
                            counts: HashMap::new(),
                            total: 0,
                        },
                    ));
                    by_label.len() - 1
                }
            };
            let p = &mut by_label[idx].1;
            for g in ngrams(text) {
                vocab.insert(g.clone());
                *p.counts.entry(g).or_default() += 1;
                p.total += 1;
            }
        }
        Self {
            profiles: by_label.into_iter().map(|(_, p)| p).collect(),
            vocabulary: vocab.len().max(1),
        }
    }

    /// Model trained on the seed corpora shipped with the crate.
    pub fn bundled() -> Self {
        Self::train(SEEDS.iter().copied())
    }
}

impl LanguageIdentifier for NgramIdentifier {
    fn identify(&self, text: &str) -> Result<LanguageGuess, IngestError> {
        let mut by_script: HashMap<Script, usize> = HashMap::new();
        for c in text.chars() {
            if let Some(s) = script_of(c) {
                *by_script.entry(s).or_default() += 1;
            }
        }
        let letters: usize = by_script.values().sum();
        if letters == 0 {
            return Err(IngestError::EmptyText);
        }
        // ties resolved by a fixed script order so the result is deterministic
        let (script, count) = by_script
            .into_iter()
            .max_by_key(|&(s, n)| (n, std::cmp::Reverse(s as u8)))
            .expect("non-empty");
        let share = count as f64 / letters as f64;
        let langs = candidates(script);
        if langs.len() == 1 {
            return Ok(LanguageGuess {
                language: langs[0],
                confidence: share,
            });
        }

        let grams = ngrams(text);
        let scored: Vec<(Language, f64)> = self
            .profiles
            .iter()
            .filter(|p| langs.contains(&p.language))
            .map(|p| (p.language, p.log_likelihood(&grams, self.vocabulary)))
            .collect();
        // first profile wins exact ties; profiles keep seed order
        let Some(&(language, best)) = scored
            .iter()
            .fold(None, |acc: Option<&(Language, f64)>, x| match acc {
                Some(a) if a.1 >= x.1 => Some(a),
                _ => Some(x),
            })
        else {
            return Ok(LanguageGuess {
                language: Language::Other,
                confidence: share,
            });
        };
        let z: f64 = scored.iter().map(|(_, s)| (s - best).exp()).sum();
        let mass: f64 = scored
            .iter()
            .filter(|(l, _)| *l == language)
            .map(|(_, s)| (s - best).exp())
            .sum();
        Ok(LanguageGuess {
            language,
            confidence: share * mass / z,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(text: &str) -> Language {
        NgramIdentifier::bundled().identify(text).unwrap().language
    }

    #[test]
    fn spec_examples() {
        assert_eq!(lang("Dengue cases rise in Pune as monsoon arrives"), Language::En);
        assert_eq!(lang("राज्य में डेंगू के नए मामले सामने आए हैं और लोग चिंतित हैं"), Language::Hi);
        assert_eq!(lang("Les autorités sanitaires signalent une hausse des cas de grippe"), Language::Other);
        assert!(matches!(NgramIdentifier::bundled().identify("  12, 34 !"), Err(IngestError::EmptyText)));
    }

    #[test]
    fn shared_script_pairs() {
        assert_eq!(lang("शहरात डेंग्यूचे नवीन रुग्ण आढळले असून नागरिकांनी काळजी घ्यावी असे आवाहन करण्यात आले आहे"), Language::Mr);
        assert_eq!(lang("গুৱাহাটীত ডেংগুৰ নতুন ৰোগী পোৱা গৈছে বুলি বিষয়াসকলে জনাইছে"), Language::As);
        assert_eq!(lang("কলকাতায় ডেঙ্গির নতুন রোগীর খবর পাওয়া গিয়েছে বলে জানিয়েছেন আধিকারিকরা"), Language::Bn);
        assert_eq!(lang("شہر میں ڈینگی کے نئے مریض سامنے آئے ہیں"), Language::Ur);
    }

    #[test]
    fn single_script_languages() {
        assert_eq!(lang("చెన్నైలో డెంగ్యూ కేసులు"), Language::Te);
        assert_eq!(lang("சென்னையில் டெங்கு"), Language::Ta);
        assert_eq!(lang("ಬೆಂಗಳೂರಿನಲ್ಲಿ ಡೆಂಗ್ಯೂ"), Language::Kn);
        assert_eq!(lang("ਲੁਧਿਆਣਾ ਵਿੱਚ ਡੇਂਗੂ"), Language::Pa);
        assert_eq!(lang("അമദാബാദ്"), Language::Ml);
        assert_eq!(lang("અમદાવાદમાં ડેન્ગ્યુ"), Language::Gu);
        assert_eq!(lang("କଟକରେ ଡେଙ୍ଗୁ"), Language::Or);
        assert_eq!(lang("Москва сообщает о гриппе"), Language::Other);
    }

    #[test]
    fn deterministic_and_bounded() {
        let id = NgramIdentifier::bundled();
        let a = id.identify("Cholera outbreak in the village").unwrap();
        let b = id.identify("Cholera outbreak in the village").unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.confidence));
    }
}
