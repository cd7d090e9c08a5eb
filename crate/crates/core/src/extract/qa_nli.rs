//! Template-driven extraction: extractive QA for counted events, NLI for
//! events stated without a count.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::templates::{
    generate_hypotheses, generate_questions, HypothesisCategory, HypothesisTemplateSet, QuestionCategory,
    QuestionTemplateSet,
};
use crate::model::{normalize_event, Article, Extractor, IncidentType, RawEvent};
use crate::numbers::parse_number;
use crate::provider::{HttpEndpoint, ProviderError};
use crate::relevance::GateDecision;

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.3;
pub const DEFAULT_ENTAILMENT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub span: String,
    pub confidence: f64,
}

pub trait QaProvider: Send + Sync {
    fn name(&self) -> &str;
    fn answer(&self, question: &str, context: &str) -> Result<Option<QaAnswer>, ProviderError>;
}

pub trait NliProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Entailment probability of `hypothesis` given `premise`.
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaNliConfig {
    /// Answers below this confidence are ignored.
    pub confidence_floor: f64,
    /// A hypothesis fires only when its score is strictly above this.
    pub entailment_threshold: f64,
}

impl Default for QaNliConfig {
    fn default() -> Self {
        Self {
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            entailment_threshold: DEFAULT_ENTAILMENT_THRESHOLD,
        }
    }
}

/// Picks the answer with the highest confidence. Equal-confidence answers
/// that disagree resolve to the larger number.
pub fn arbitrate(answers: &[(u64, f64)]) -> Option<(u64, f64)> {
    let best = answers
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
    if answers.iter().any(|&(n, c)| c == best.1 && n != best.0) {
        tracing::info!(number = best.0, confidence = best.1, "equal-confidence answers disagree; kept larger count");
    }
    Some(best)
}

fn dedup(events: Vec<RawEvent>) -> Vec<RawEvent> {
    let mut seen = HashSet::new();
    events.into_iter().filter(|e| seen.insert(e.tuple_key())).collect()
}

fn event(
    article: &Article,
    disease: &str,
    location: &str,
    incident: crate::model::Incident,
    incident_type: IncidentType,
    number: Option<u64>,
    confidence: f64,
) -> Option<RawEvent> {
    normalize_event(RawEvent {
        disease: disease.to_string(),
        location: location.to_string(),
        incident,
        incident_type,
        number,
        article_id: article.id.clone(),
        extractor: Extractor::QaNli,
        confidence: Some(confidence.clamp(0.0, 1.0)),
    })
    .ok()
}

/// Counted events, at most one per (pair, category).
pub fn extract_numbered(
    article: &Article,
    pairs: &[(String, String)],
    qa: &dyn QaProvider,
    templates: &QuestionTemplateSet,
    config: &QaNliConfig,
) -> Vec<RawEvent> {
    let context = article.english_text();
    let jobs: Vec<(&(String, String), QuestionCategory)> = pairs
        .iter()
        .flat_map(|p| QuestionCategory::ALL.into_iter().map(move |c| (p, c)))
        .collect();
    let found: Vec<Option<RawEvent>> = jobs
        .par_iter()
        .map(|((disease, location), category)| {
            let answers: Vec<(u64, f64)> = generate_questions(disease, location, templates)
                .into_iter()
                .filter(|(c, _)| c == category)
                .filter_map(|(_, q)| match qa.answer(&q, context) {
                    Ok(a) => a,
                    Err(e) => {
                        tracing::warn!(provider = qa.name(), error = %e, "question skipped");
                        None
                    }
                })
                .filter(|a| a.confidence >= config.confidence_floor)
                .filter_map(|a| parse_number(&a.span).map(|n| (n, a.confidence)))
                .collect();
            let (number, confidence) = arbitrate(&answers)?;
            event(
                article,
                disease,
                location,
                category.incident(),
                category.incident_type(),
                Some(number),
                confidence,
            )
        })
        .collect();
    dedup(found.into_iter().flatten().collect())
}

/// Events without a count, one per (pair, category) whose hypotheses entail.
pub fn extract_numberless(
    article: &Article,
    pairs: &[(String, String)],
    nli: &dyn NliProvider,
    templates: &HypothesisTemplateSet,
    config: &QaNliConfig,
) -> Vec<RawEvent> {
    let premise = article.english_text();
    let jobs: Vec<(&(String, String), HypothesisCategory)> = pairs
        .iter()
        .flat_map(|p| HypothesisCategory::ALL.into_iter().map(move |c| (p, c)))
        .collect();
    let found: Vec<Option<RawEvent>> = jobs
        .par_iter()
        .map(|((disease, location), category)| {
            let best = generate_hypotheses(disease, location, templates)
                .into_iter()
                .filter(|(c, _)| c == category)
                .filter_map(|(_, h)| match nli.entail(premise, &h) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        tracing::warn!(provider = nli.name(), error = %e, "hypothesis skipped");
                        None
                    }
                })
                .filter(|&s| s > config.entailment_threshold)
                .max_by(f64::total_cmp)?;
            event(
                article,
                disease,
                location,
                category.incident(),
                IncidentType::Unspecified,
                None,
                best,
            )
        })
        .collect();
    dedup(found.into_iter().flatten().collect())
}

/// QA and NLI providers with their templates.
pub struct QaNliExtractor {
    pub qa: Box<dyn QaProvider>,
    pub nli: Box<dyn NliProvider>,
    pub questions: QuestionTemplateSet,
    pub hypotheses: HypothesisTemplateSet,
    pub config: QaNliConfig,
}

impl QaNliExtractor {
    pub fn new(qa: Box<dyn QaProvider>, nli: Box<dyn NliProvider>) -> Self {
        Self {
            qa,
            nli,
            questions: QuestionTemplateSet::bundled(),
            hypotheses: HypothesisTemplateSet::bundled(),
            config: QaNliConfig::default(),
        }
    }

    pub fn with_config(mut self, config: QaNliConfig) -> Self {
        self.config = config;
        self
    }

    pub fn extract(&self, article: &Article, gate: &GateDecision) -> Vec<RawEvent> {
        extract_events_qa_nli(article, gate, self)
    }
}

/// Numbered events when QA finds any, numberless events otherwise.
pub fn extract_events_qa_nli(article: &Article, gate: &GateDecision, ex: &QaNliExtractor) -> Vec<RawEvent> {
    let pairs = gate.pairs();
    if pairs.is_empty() {
        return Vec::new();
    }
    let numbered = extract_numbered(article, &pairs, ex.qa.as_ref(), &ex.questions, &ex.config);
    if !numbered.is_empty() {
        return numbered;
    }
    extract_numberless(article, &pairs, ex.nli.as_ref(), &ex.hypotheses, &ex.config)
}

/// Extractive QA endpoint: `{question, context} -> {answer, score}`.
pub struct HttpQa {
    endpoint: HttpEndpoint,
}

impl HttpQa {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

#[derive(Serialize)]
struct QaRequest<'a> {
    question: &'a str,
    context: &'a str,
}

#[derive(Deserialize)]
struct QaReply {
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    score: f64,
}

impl QaProvider for HttpQa {
    fn name(&self) -> &str {
        "http-qa"
    }

    fn answer(&self, question: &str, context: &str) -> Result<Option<QaAnswer>, ProviderError> {
        let reply: QaReply = self.endpoint.post_json(&QaRequest { question, context })?;
        Ok(reply.answer.filter(|a| !a.trim().is_empty()).map(|span| QaAnswer {
            span,
            confidence: reply.score.clamp(0.0, 1.0),
        }))
    }
}

/// NLI endpoint: `{premise, hypothesis} -> {entailment}`.
pub struct HttpNli {
    endpoint: HttpEndpoint,
}

impl HttpNli {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct NliReply {
    entailment: f64,
}

impl NliProvider for HttpNli {
    fn name(&self) -> &str {
        "http-nli"
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        let reply: NliReply = self.endpoint.post_json(&NliRequest { premise, hypothesis })?;
        Ok(reply.entailment.clamp(0.0, 1.0))
    }
}

const DEATH_CUES: &[&str] = &[
    "died", "dead", "death", "deaths", "die", "dies", "killed", "life", "lives", "succumbed", "toll",
];
const CASE_CUES: &[&str] = &[
    "case", "cases", "ill", "infected", "infections", "admitted", "hospitalised", "hospitalized", "patients",
    "positive", "sick", "affected",
];
const TOTAL_CUES: &[&str] = &["total", "tally", "toll", "reached", "cumulative", "overall", "increased", "risen", "rose", "climbed"];
const CUE_WINDOW: usize = 4;

fn context_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric() && c != ',')
                .trim_matches(',')
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Offline QA stand-in. It recognizes which template a question came from,
/// then answers with the number closest before an incident cue word.
pub struct HeuristicQa {
    templates: QuestionTemplateSet,
}

impl Default for HeuristicQa {
    fn default() -> Self {
        Self {
            templates: QuestionTemplateSet::bundled(),
        }
    }
}

impl QaProvider for HeuristicQa {
    fn name(&self) -> &str {
        "heuristic-qa"
    }

    fn answer(&self, question: &str, context: &str) -> Result<Option<QaAnswer>, ProviderError> {
        let Some((category, disease, location)) = self.templates.recover(question) else {
            return Ok(None);
        };
        let cues = match category.incident() {
            crate::model::Incident::Case => CASE_CUES,
            crate::model::Incident::Death => DEATH_CUES,
        };
        let want_total = category.incident_type() == IncidentType::Total;
        let lower = context.to_lowercase();
        let base = 0.4
            + if lower.contains(&disease.to_lowercase()) { 0.25 } else { 0.0 }
            + if lower.contains(&location.to_lowercase()) { 0.25 } else { 0.0 };
        let tokens = context_tokens(context);
        let mut best: Option<QaAnswer> = None;
        for (i, tok) in tokens.iter().enumerate() {
            let Some(_) = parse_number(tok) else { continue };
            let Some(dist) = tokens[i + 1..]
                .iter()
                .take(CUE_WINDOW)
                .position(|t| cues.contains(&t.as_str()))
            else {
                continue;
            };
            let before = &tokens[i.saturating_sub(CUE_WINDOW)..i];
            let is_total = before.iter().any(|t| TOTAL_CUES.contains(&t.as_str()));
            if is_total != want_total {
                continue;
            }
            let confidence = base + 0.02 * (CUE_WINDOW - dist) as f64;
            if best.as_ref().is_none_or(|b| confidence > b.confidence) {
                best = Some(QaAnswer {
                    span: tok.clone(),
                    confidence,
                });
            }
        }
        Ok(best)
    }
}

const SPREAD_CUES: &[&str] = &[
    "spread", "spreading", "spreads", "rise", "rising", "increase", "increasing", "outbreak", "infected", "ill",
    "sick", "suffering", "cases", "positive", "surge",
];

/// Offline NLI stand-in: entails when the premise names the hypothesis'
/// disease and location together with a cue for its category.
pub struct HeuristicNli {
    templates: HypothesisTemplateSet,
}

impl Default for HeuristicNli {
    fn default() -> Self {
        Self {
            templates: HypothesisTemplateSet::bundled(),
        }
    }
}

impl NliProvider for HeuristicNli {
    fn name(&self) -> &str {
        "heuristic-nli"
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        let Some((category, disease, location)) = self.templates.recover(hypothesis) else {
            return Ok(0.0);
        };
        let lower = premise.to_lowercase();
        if !lower.contains(&disease.to_lowercase()) || !lower.contains(&location.to_lowercase()) {
            return Ok(0.05);
        }
        let cues = match category {
            HypothesisCategory::Cases => SPREAD_CUES,
            HypothesisCategory::Deaths => DEATH_CUES,
        };
        let tokens = context_tokens(premise);
        Ok(if tokens.iter().any(|t| cues.contains(&t.as_str())) {
            0.9
        } else {
            0.4
        })
    }
}
