//! Shared domain types used by every pipeline stage.
//!
//! All types are plain immutable values once constructed. Their serde
//! representation is the canonical JSON form used on disk and over HTTP:
//! field names are kept exactly as declared and timestamps serialize as
//! RFC-3339 strings.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numbers::parse_number;
use crate::web;

/// Sentinel standard disease name for diseases outside the canonical list.
pub const OTHERS: &str = "Others";

/// Separator placed between an article's title and description.
pub const TEXT_SEPARATOR: &str = ". ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("invalid article: {0}")]
    InvalidArticle(String),
}

/// Hex digest over the given parts, used for content-addressed identifiers.
pub(crate) fn content_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    hex::encode(&hasher.finalize()[..16])
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(
    /// Hash of the article's normalized URL.
    ArticleId
);
id_type!(
    /// Hash of the event's provenance and normalized 5-tuple.
    EventId
);
id_type!(
    /// Hash of the cluster's day and sorted member ids.
    ClusterId
);

impl ArticleId {
    pub fn from_url(url: &str) -> Self {
        Self(content_hash(&[&web::normalize_url(url)]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Hi,
    Te,
    Kn,
    Gu,
    Ta,
    Pa,
    Bn,
    Mr,
    Ml,
    Or,
    As,
    Ur,
    /// Anything outside the supported set.
    Other,
}

impl Language {
    pub const SUPPORTED: [Language; 13] = [
        Language::En,
        Language::Hi,
        Language::Te,
        Language::Kn,
        Language::Gu,
        Language::Ta,
        Language::Pa,
        Language::Bn,
        Language::Mr,
        Language::Ml,
        Language::Or,
        Language::As,
        Language::Ur,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Hi => "hi",
            Language::Te => "te",
            Language::Kn => "kn",
            Language::Gu => "gu",
            Language::Ta => "ta",
            Language::Pa => "pa",
            Language::Bn => "bn",
            Language::Mr => "mr",
            Language::Ml => "ml",
            Language::Or => "or",
            Language::As => "as",
            Language::Ur => "ur",
            Language::Other => "other",
        }
    }

    pub fn is_supported(self) -> bool {
        self != Language::Other
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim().to_ascii_lowercase();
        Language::SUPPORTED
            .into_iter()
            .chain([Language::Other])
            .find(|l| l.code() == code)
            .ok_or_else(|| ModelError::InvalidArticle(format!("unknown language code {s:?}")))
    }
}

/// Collapses every whitespace run to a single space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Joins title and description into the text every downstream stage reads.
pub fn compose_text(title: &str, description: &str) -> String {
    let title = collapse_whitespace(title);
    let description = collapse_whitespace(description);
    match (title.is_empty(), description.is_empty()) {
        (true, _) => description,
        (_, true) => title,
        _ => format!("{title}{TEXT_SEPARATOR}{description}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: ArticleId,
    pub url: String,
    pub domain: String,
    pub published_at: Option<DateTime<Utc>>,
    pub fetched_at: DateTime<Utc>,
    pub language: Language,
    pub title: String,
    pub description: String,
    pub text: String,
    #[serde(default)]
    pub translated_text: Option<String>,
}

impl Article {
    /// Builds an article, deriving id, domain and text from the inputs.
    pub fn new(
        url: &str,
        published_at: Option<DateTime<Utc>>,
        fetched_at: DateTime<Utc>,
        language: Language,
        title: &str,
        description: &str,
    ) -> Result<Self, ModelError> {
        let domain = web::registrable_domain(url)
            .ok_or_else(|| ModelError::InvalidArticle(format!("no host in url {url:?}")))?;
        Ok(Self {
            id: ArticleId::from_url(url),
            url: url.to_string(),
            domain,
            published_at,
            fetched_at,
            language,
            title: title.to_string(),
            description: description.to_string(),
            text: compose_text(title, description),
            translated_text: None,
        })
    }

    /// The day an article's events are clustered under.
    pub fn event_day(&self) -> NaiveDate {
        self.published_at.unwrap_or(self.fetched_at).date_naive()
    }

    /// English text for post-translation stages; falls back to the source text.
    pub fn english_text(&self) -> &str {
        self.translated_text.as_deref().unwrap_or(&self.text)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text != compose_text(&self.title, &self.description) {
            return Err(ModelError::InvalidArticle("text does not match title and description".into()));
        }
        if !self.language.is_supported() {
            return Err(ModelError::InvalidArticle(format!("unsupported language {}", self.language)));
        }
        if web::registrable_domain(&self.url).as_deref() != Some(self.domain.as_str()) {
            return Err(ModelError::InvalidArticle(format!("domain {:?} not derived from url", self.domain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Incident {
    Case,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentType {
    New,
    Total,
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    QaNli,
    Llm,
}

impl Incident {
    pub fn as_str(self) -> &'static str {
        match self {
            Incident::Case => "case",
            Incident::Death => "death",
        }
    }
}

impl IncidentType {
    pub fn as_str(self) -> &'static str {
        match self {
            IncidentType::New => "new",
            IncidentType::Total => "total",
            IncidentType::Unspecified => "unspecified",
        }
    }
}

impl Extractor {
    pub fn as_str(self) -> &'static str {
        match self {
            Extractor::QaNli => "qa_nli",
            Extractor::Llm => "llm",
        }
    }
}

pub fn parse_incident(raw: &str) -> Result<Incident, ModelError> {
    match raw.trim().to_lowercase().as_str() {
        "case" | "cases" => Ok(Incident::Case),
        "death" | "deaths" => Ok(Incident::Death),
        other => Err(ModelError::MalformedEvent(format!("incident {other:?} is not case or death"))),
    }
}

pub fn parse_incident_type(raw: &str) -> Result<IncidentType, ModelError> {
    match raw.trim().to_lowercase().as_str() {
        "new" => Ok(IncidentType::New),
        "total" | "cumulative" => Ok(IncidentType::Total),
        "" | "_" | "-" | "unspecified" | "none" | "null" | "n/a" => Ok(IncidentType::Unspecified),
        other => Err(ModelError::MalformedEvent(format!("incident type {other:?} is not new or total"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub disease: String,
    pub location: String,
    pub incident: Incident,
    pub incident_type: IncidentType,
    pub number: Option<u64>,
    pub article_id: ArticleId,
    pub extractor: Extractor,
    #[serde(default)]
    pub confidence: Option<f64>,
}

impl RawEvent {
    pub fn id(&self) -> EventId {
        let number = self.number.map(|n| n.to_string()).unwrap_or_default();
        EventId(content_hash(&[
            self.article_id.as_str(),
            self.extractor.as_str(),
            &self.disease_key(),
            &self.location_key(),
            self.incident.as_str(),
            self.incident_type.as_str(),
            &number,
        ]))
    }

    /// Casefolded disease used for equality and lookups.
    pub fn disease_key(&self) -> String {
        collapse_whitespace(&self.disease).to_lowercase()
    }

    pub fn location_key(&self) -> String {
        collapse_whitespace(&self.location).to_lowercase()
    }

    /// The comparable 5-tuple, ignoring provenance.
    pub fn tuple_key(&self) -> (String, String, Incident, IncidentType, Option<u64>) {
        (
            self.disease_key(),
            self.location_key(),
            self.incident,
            self.incident_type,
            self.number,
        )
    }

    pub fn is_numberless(&self) -> bool {
        self.number.is_none()
    }
}

/// Canonicalizes a typed event: whitespace in free-text fields is collapsed
/// and numberless events always carry `IncidentType::Unspecified`.
pub fn normalize_event(raw: RawEvent) -> Result<RawEvent, ModelError> {
    let disease = collapse_whitespace(&raw.disease);
    let location = collapse_whitespace(&raw.location);
    if disease.is_empty() || location.is_empty() {
        return Err(ModelError::MalformedEvent("disease and location must be non-empty".into()));
    }
    let incident_type = match (raw.number, raw.incident_type) {
        (None, _) => IncidentType::Unspecified,
        (Some(_), IncidentType::Unspecified) => {
            return Err(ModelError::MalformedEvent(
                "numbered event without a new/total incident type".into(),
            ))
        }
        (Some(_), t) => t,
    };
    if let Some(c) = raw.confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(ModelError::MalformedEvent(format!("confidence {c} outside [0, 1]")));
        }
    }
    Ok(RawEvent {
        disease,
        location,
        incident_type,
        ..raw
    })
}

/// Loosely typed event fields as they come out of a model response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventDraft {
    pub disease: String,
    pub location: String,
    pub incident: String,
    pub incident_type: String,
    pub number: Option<String>,
}

impl EventDraft {
    pub fn normalize(
        &self,
        article_id: &ArticleId,
        extractor: Extractor,
        confidence: Option<f64>,
    ) -> Result<RawEvent, ModelError> {
        let incident = parse_incident(&self.incident)?;
        let incident_type = parse_incident_type(&self.incident_type)?;
        let number = self.number.as_deref().and_then(parse_number);
        normalize_event(RawEvent {
            disease: self.disease.clone(),
            location: self.location.clone(),
            incident,
            incident_type,
            number,
            article_id: article_id.clone(),
            extractor,
            confidence,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMethod {
    /// Disease and location resolved from curated tables only.
    Table,
    /// At least one field was resolved through a model fallback.
    Llm,
    /// Neither disease nor location could be standardized.
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedEvent {
    pub raw: RawEvent,
    pub standard_disease: String,
    pub state: String,
    pub district: String,
    pub subdistrict: String,
    pub mapping_method: MappingMethod,
    pub international: bool,
}

impl MappedEvent {
    pub fn id(&self) -> EventId {
        self.raw.id()
    }

    /// District implies state and sub-district implies district.
    pub fn is_hierarchy_consistent(&self) -> bool {
        (self.district.is_empty() || !self.state.is_empty())
            && (self.subdistrict.is_empty() || !self.district.is_empty())
    }

    pub fn disease_ambiguous(&self) -> bool {
        self.standard_disease == OTHERS
    }

    /// Location levels from coarsest to finest.
    pub fn levels(&self) -> [&str; 3] {
        [&self.state, &self.district, &self.subdistrict]
    }

    /// Finest non-blank location level, or the empty string.
    pub fn deepest_location(&self) -> &str {
        self.levels()
            .into_iter()
            .rev()
            .find(|l| !l.is_empty())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub day: NaiveDate,
    pub member_ids: Vec<EventId>,
    pub representative_id: EventId,
}

impl Cluster {
    /// Builds a cluster with a content-addressed id over day and sorted members.
    pub fn new(day: NaiveDate, mut member_ids: Vec<EventId>, representative_id: EventId) -> Self {
        member_ids.sort();
        member_ids.dedup();
        let day_str = day.to_string();
        let mut parts: Vec<&str> = vec![&day_str];
        parts.extend(member_ids.iter().map(EventId::as_str));
        Self {
            id: ClusterId(content_hash(&parts)),
            day,
            member_ids,
            representative_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Shortlisted,
    Rejected,
    Pending,
}

impl Decision {
    pub fn can_transition_to(self, next: Decision) -> bool {
        self == Decision::Pending && next != Decision::Pending
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shortlisted" => Ok(Decision::Shortlisted),
            "rejected" => Ok(Decision::Rejected),
            "pending" => Ok(Decision::Pending),
            other => Err(format!("unknown decision {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub cluster_id: ClusterId,
    pub decision: Decision,
    pub reviewer: String,
    pub note: String,
    pub decided_at: DateTime<Utc>,
}
