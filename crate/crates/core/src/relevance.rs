//! Relevance gate and the disease + Indian-location entity gate.
//!
//! Classification runs on the source-language text before translation; the
//! entity gate runs on the English text afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gazetteer::{Gazetteer, LocationRef};
use crate::model::{Article, Language};
use crate::provider::{HttpEndpoint, ProviderError};
use crate::text::{phrase_key, PhraseMatcher};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RelevanceError {
    #[error("classifier unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no classifier for language {0}")]
    UnsupportedLanguage(Language),
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),
    #[error("classifier returned score {0} outside [0, 1]")]
    InvalidScore(f64),
}

impl RelevanceError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RelevanceError::ProviderUnavailable(_))
    }
}

impl From<ProviderError> for RelevanceError {
    fn from(e: ProviderError) -> Self {
        RelevanceError::ProviderUnavailable(e.to_string())
    }
}

/// Scores how likely a text is to report an actionable health event.
pub trait ClassifierProvider: Send + Sync {
    fn name(&self) -> &str;
    fn supports(&self, language: Language) -> bool;
    fn score(&self, text: &str, language: Language) -> Result<f64, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub label: Label,
    pub score: f64,
}

/// Relevant iff the provider's score reaches `threshold`.
pub fn classify_relevance(
    article: &Article,
    provider: &dyn ClassifierProvider,
    threshold: f64,
) -> Result<Relevance, RelevanceError> {
    if article.text.trim().is_empty() {
        return Err(RelevanceError::UnsupportedInput("empty text".into()));
    }
    if !provider.supports(article.language) {
        return Err(RelevanceError::UnsupportedLanguage(article.language));
    }
    let score = provider.score(&article.text, article.language)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(RelevanceError::InvalidScore(score));
    }
    let label = if score >= threshold {
        Label::Relevant
    } else {
        Label::Irrelevant
    };
    Ok(Relevance { label, score })
}

/// Text-classification endpoint speaking `{text, language} -> {score}`.
pub struct HttpClassifier {
    endpoint: HttpEndpoint,
    languages: BTreeSet<Language>,
}

impl HttpClassifier {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self {
            endpoint,
            languages: Language::SUPPORTED.into_iter().collect(),
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    text: &'a str,
    language: Language,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

impl ClassifierProvider for HttpClassifier {
    fn name(&self) -> &str {
        "http-classifier"
    }

    fn supports(&self, language: Language) -> bool {
        self.languages.contains(&language)
    }

    fn score(&self, text: &str, language: Language) -> Result<f64, ProviderError> {
        let reply: ScoreReply = self.endpoint.post_json(&ScoreRequest { text, language })?;
        Ok(reply.score)
    }
}

const EVENT_TERMS: &[&str] = &[
    "case", "cases", "die", "dies", "died", "death", "deaths", "dead", "killed", "claims", "toll", "infected",
    "infection", "infections", "detected", "outbreak", "admitted", "hospitalised", "hospitalized", "fell ill",
    "falls ill", "fall ill", "sick", "positive", "patients", "bitten", "bit", "succumbed", "passed away",
    // Hindi
    "मौत", "मामले", "संक्रमित", "बीमार", "भर्ती", "मरीज", "मरीजों",
];

const INFO_CUES: &[&str] = &[
    "what is", "how does", "how to", "ways to", "tips", "stay safe", "prevention", "prevent", "symptoms",
    "treatment", "awareness", "guidelines", "research", "study", "vaccine", "vaccinated", "vaccination",
    "campaign", "explained", "myths",
    // Hindi
    "क्या है", "कैसे", "उपाय", "बचाव", "लक्षण",
];

/// Transparent offline classifier: the share of event-term hits among all
/// cue hits, with one pseudo-count of doubt.
pub struct KeywordClassifier {
    event: PhraseMatcher,
    info: PhraseMatcher,
    languages: BTreeSet<Language>,
}

impl Default for KeywordClassifier {
    fn default() -> Self {
        Self {
            event: PhraseMatcher::new(EVENT_TERMS.iter().copied()),
            info: PhraseMatcher::new(INFO_CUES.iter().copied()),
            languages: [Language::En, Language::Hi].into_iter().collect(),
        }
    }
}

impl KeywordClassifier {
    pub fn hits(&self, text: &str) -> (usize, usize) {
        (self.event.find(text).len(), self.info.find(text).len())
    }
}

impl ClassifierProvider for KeywordClassifier {
    fn name(&self) -> &str {
        "keyword"
    }

    fn supports(&self, language: Language) -> bool {
        self.languages.contains(&language)
    }

    fn score(&self, text: &str, _language: Language) -> Result<f64, ProviderError> {
        let (e, i) = self.hits(text);
        Ok(e as f64 / (e + i + 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

/// Surface form to canonical disease name.
#[derive(Debug, Clone, Default)]
pub struct DiseaseLexicon {
    entries: BTreeMap<String, String>,
    matcher: PhraseMatcher,
}

impl DiseaseLexicon {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut lex = Self::default();
        for (surface, canonical) in pairs {
            lex.insert(surface, canonical);
        }
        lex
    }

    fn insert(&mut self, surface: &str, canonical: &str) -> bool {
        let key = phrase_key(surface);
        if key.is_empty() || canonical.trim().is_empty() {
            return false;
        }
        self.matcher.insert(&key);
        self.entries.insert(key, canonical.trim().to_string());
        true
    }

    /// Reads CSV `surface,canonical` with a header row.
    pub fn from_csv(reader: impl Read) -> Result<Self, LexiconError> {
        let mut lex = Self::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| LexiconError::Row {
                row: i + 1,
                msg: e.to_string(),
            })?;
            let (Some(surface), Some(canonical)) = (rec.get(0), rec.get(1)) else {
                return Err(LexiconError::Row {
                    row: i + 1,
                    msg: "expected surface,canonical".into(),
                });
            };
            if !lex.insert(surface, canonical) {
                return Err(LexiconError::Row {
                    row: i + 1,
                    msg: "empty surface or canonical".into(),
                });
            }
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let file = std::fs::File::open(path).map_err(|e| LexiconError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.entries.get(&phrase_key(surface)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// External named-entity recognizer returning entity spans.
pub trait NerProvider: Send + Sync {
    fn name(&self) -> &str;
    fn spans(&self, text: &str) -> Result<Vec<String>, ProviderError>;
}

/// Canonical diseases mentioned in `text`: lexicon hits plus NER spans,
/// the latter mapped through the lexicon when possible and kept verbatim
/// otherwise. A failing NER provider only loses its own contribution.
pub fn spot_diseases(text: &str, lexicon: &DiseaseLexicon, ner: Option<&dyn NerProvider>) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = lexicon
        .matcher
        .find(text)
        .iter()
        .filter_map(|k| lexicon.entries.get(k).cloned())
        .collect();
    if let Some(ner) = ner {
        match ner.spans(text) {
            Ok(spans) => {
                for span in spans {
                    let span = span.trim();
                    if span.is_empty() {
                        continue;
                    }
                    out.insert(lexicon.lookup(span).map(str::to_string).unwrap_or_else(|| span.to_string()));
                }
            }
            Err(e) => tracing::warn!(provider = ner.name(), error = %e, "disease NER failed; lexicon only"),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationMention {
    /// Normalized surface text as matched.
    pub surface: String,
    /// Display name used when building questions and prompts.
    pub name: String,
    pub candidates: Vec<LocationRef>,
    pub ambiguous: bool,
}

fn mention(gazetteer: &Gazetteer, surface: &str) -> Option<LocationMention> {
    let ids = gazetteer.lookup(surface);
    let first = *ids.first()?;
    let mut candidates: Vec<LocationRef> = ids.iter().map(|&id| gazetteer.location_ref(id)).collect();
    candidates.sort();
    candidates.dedup();
    Some(LocationMention {
        surface: phrase_key(surface),
        name: gazetteer.node(first).name.clone(),
        ambiguous: candidates.len() > 1,
        candidates,
    })
}

/// Gazetteer locations in `text`, once per surface, in order of appearance.
pub fn spot_locations(text: &str, gazetteer: &Gazetteer, ner: Option<&dyn NerProvider>) -> Vec<LocationMention> {
    let mut surfaces = gazetteer.spot(text);
    if let Some(ner) = ner {
        match ner.spans(text) {
            Ok(spans) => surfaces.extend(spans.iter().map(|s| phrase_key(s))),
            Err(e) => tracing::warn!(provider = ner.name(), error = %e, "location NER failed; gazetteer only"),
        }
    }
    let mut seen = BTreeSet::new();
    surfaces
        .iter()
        .filter(|s| seen.insert(s.to_string()))
        .filter_map(|s| mention(gazetteer, s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub keep: bool,
    pub diseases: BTreeSet<String>,
    pub locations: Vec<LocationMention>,
}

impl GateDecision {
    /// Every (disease, location) pair, in stable order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for d in &self.diseases {
            for l in &self.locations {
                out.push((d.clone(), l.name.clone()));
            }
        }
        out
    }
}

/// The lexicon, gazetteer and optional NER providers behind the entity gate.
pub struct EntityGate {
    pub lexicon: DiseaseLexicon,
    pub gazetteer: Gazetteer,
    pub disease_ner: Option<Box<dyn NerProvider>>,
    pub location_ner: Option<Box<dyn NerProvider>>,
}

impl EntityGate {
    pub fn new(lexicon: DiseaseLexicon, gazetteer: Gazetteer) -> Self {
        Self {
            lexicon,
            gazetteer,
            disease_ner: None,
            location_ner: None,
        }
    }

    pub fn check(&self, article: &Article) -> GateDecision {
        entity_gate(
            article,
            &self.lexicon,
            &self.gazetteer,
            self.disease_ner.as_deref(),
            self.location_ner.as_deref(),
        )
    }
}

/// Keeps an article iff it names at least one disease and one Indian location.
pub fn entity_gate(
    article: &Article,
    lexicon: &DiseaseLexicon,
    gazetteer: &Gazetteer,
    disease_ner: Option<&dyn NerProvider>,
    location_ner: Option<&dyn NerProvider>,
) -> GateDecision {
    let text = article.english_text();
    let diseases = spot_diseases(text, lexicon, disease_ner);
    let locations = spot_locations(text, gazetteer, location_ner);
    GateDecision {
        keep: !diseases.is_empty() && !locations.is_empty(),
        diseases,
        locations,
    }
}
