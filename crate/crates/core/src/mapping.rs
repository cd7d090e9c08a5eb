//! Standardization of extracted disease and location names.
//!
//! Diseases go through the curated synonym table first and a model fallback
//! second. Locations are resolved against the gazetteer, falling back to a
//! consistency-voted model answer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::extract::llm::{first_array, requote, INTERNATIONAL};
use crate::gazetteer::{Gazetteer, Level, LocationRef, NodeId};
use crate::model::{Article, EventId, MappedEvent, MappingMethod, RawEvent, OTHERS};
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, RetryPolicy};
use crate::text::phrase_key;

pub const DISEASE_SYSTEM: &str = include_str!("../assets/prompts/disease_system.txt");
pub const DISEASE_FEW_SHOT: &str = include_str!("../assets/prompts/disease_few_shot.json");
pub const LOCATION_SYSTEM: &str = include_str!("../assets/prompts/location_system.txt");
pub const LOCATION_FEW_SHOT: &str = include_str!("../assets/prompts/location_few_shot.json");

pub const DISEASE_LIST_SLOT: &str = "{Disease List}";
pub const DEFAULT_SUFFIXES: [&str; 4] = ["infectious disease", "infection", "disease", "outbreak"];
pub const DEFAULT_VOTE_K: usize = 3;
pub const DEFAULT_VOTE_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("synonym row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

/// Surface names to the configured canonical diseases.
#[derive(Debug, Default)]
pub struct DiseaseSynonymTable {
    canonical: Vec<String>,
    canonical_keys: HashMap<String, usize>,
    synonyms: BTreeMap<String, String>,
    pending: Mutex<BTreeMap<String, String>>,
    suffixes: Vec<String>,
}

impl Clone for DiseaseSynonymTable {
    fn clone(&self) -> Self {
        Self {
            canonical: self.canonical.clone(),
            canonical_keys: self.canonical_keys.clone(),
            synonyms: self.synonyms.clone(),
            pending: Mutex::new(self.pending()),
            suffixes: self.suffixes.clone(),
        }
    }
}

impl DiseaseSynonymTable {
    /// Fails when a synonym targets a name outside `canonical`.
    pub fn new<'a>(
        canonical: impl IntoIterator<Item = &'a str>,
        synonyms: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, MappingError> {
        let mut t = Self {
            suffixes: DEFAULT_SUFFIXES.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        };
        for name in canonical {
            let name = name.trim();
            let key = phrase_key(name);
            if key.is_empty() || t.canonical_keys.contains_key(&key) {
                continue;
            }
            t.canonical_keys.insert(key, t.canonical.len());
            t.canonical.push(name.to_string());
        }
        for (i, (surface, target)) in synonyms.into_iter().enumerate() {
            let Some(canon) = t.canonical_name(target) else {
                return Err(MappingError::Row {
                    row: i + 1,
                    msg: format!("{target:?} is not a canonical disease"),
                });
            };
            let canon = canon.to_string();
            t.synonyms.insert(phrase_key(surface), canon);
        }
        Ok(t)
    }

    /// Canonical list (one per line) and synonym CSV `surface,canonical`.
    pub fn load(canonical_path: &Path, synonyms_path: &Path) -> Result<Self, MappingError> {
        let io = |p: &Path, e: std::io::Error| MappingError::Io(format!("{}: {e}", p.display()));
        let canonical = std::fs::read_to_string(canonical_path).map_err(|e| io(canonical_path, e))?;
        let file = std::fs::File::open(synonyms_path).map_err(|e| io(synonyms_path, e))?;
        let pairs = read_pairs(file)?;
        Self::new(
            canonical.lines().filter(|l| !l.trim().starts_with('#')),
            pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())),
        )
    }

    pub fn with_suffixes(mut self, suffixes: Vec<String>) -> Self {
        let mut s: Vec<String> = suffixes.iter().map(|x| phrase_key(x)).filter(|x| !x.is_empty()).collect();
        s.sort_by_key(|x| std::cmp::Reverse(x.len()));
        self.suffixes = s;
        self
    }

    pub fn canonical(&self) -> &[String] {
        &self.canonical
    }

    pub fn is_canonical(&self, name: &str) -> bool {
        self.canonical_keys.contains_key(&phrase_key(name))
    }

    fn canonical_name(&self, name: &str) -> Option<&str> {
        self.canonical_keys
            .get(&phrase_key(name))
            .map(|&i| self.canonical[i].as_str())
    }

    /// Keys tried for a surface: the name, then with generic trailing words removed.
    fn candidate_keys(&self, name: &str) -> Vec<String> {
        let mut key = phrase_key(name);
        let mut out = vec![key.clone()];
        'strip: loop {
            for suffix in &self.suffixes {
                if let Some(rest) = key.strip_suffix(suffix.as_str()).and_then(|r| r.strip_suffix(' ')) {
                    key = rest.to_string();
                    out.push(key.clone());
                    continue 'strip;
                }
            }
            break;
        }
        out
    }

    /// Canonical disease for a surface form, if the table knows it.
    pub fn lookup(&self, name: &str) -> Option<&str> {
        self.candidate_keys(name).iter().find_map(|k| {
            self.canonical_keys
                .get(k)
                .map(|&i| self.canonical[i].as_str())
                .or_else(|| self.synonyms.get(k).map(String::as_str))
        })
    }

    /// Accepts a model answer only if it names a canonical disease or `Others`.
    pub fn validate_answer(&self, answer: &str) -> Option<String> {
        let answer = answer.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '`').trim();
        if answer.eq_ignore_ascii_case(OTHERS) {
            return Some(OTHERS.to_string());
        }
        self.candidate_keys(answer)
            .iter()
            .find_map(|k| self.canonical_keys.get(k).map(|&i| self.canonical[i].clone()))
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    pub fn pending(&self) -> BTreeMap<String, String> {
        self.pending.lock().expect("pending poisoned").clone()
    }

    pub fn add_pending(&self, surface: &str, canonical: &str) -> bool {
        let Some(canon) = self.canonical_name(canonical) else {
            return false;
        };
        let key = phrase_key(surface);
        if key.is_empty() || self.lookup(surface).is_some() {
            return false;
        }
        self.pending.lock().expect("pending poisoned").insert(key, canon.to_string());
        true
    }

    /// Moves a pending proposal into the live table.
    pub fn promote(&mut self, surface: &str) -> Option<String> {
        let key = phrase_key(surface);
        let canon = self.pending.get_mut().expect("pending poisoned").remove(&key)?;
        self.synonyms.insert(key, canon.clone());
        Some(canon)
    }

    pub fn write_synonyms(&self, writer: impl Write) -> Result<(), MappingError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| MappingError::Io(e.to_string());
        w.write_record(["surface", "canonical"]).map_err(err)?;
        for (s, c) in &self.synonyms {
            w.write_record([s, c]).map_err(err)?;
        }
        w.flush().map_err(|e| MappingError::Io(e.to_string()))
    }

    pub fn write_pending(&self, writer: impl Write) -> Result<(), MappingError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| MappingError::Io(e.to_string());
        w.write_record(["surface", "canonical"]).map_err(err)?;
        for (s, c) in self.pending() {
            w.write_record([s, c]).map_err(err)?;
        }
        w.flush().map_err(|e| MappingError::Io(e.to_string()))
    }

    /// Restores pending proposals written by [`Self::write_pending`].
    pub fn read_pending(&self, reader: impl Read) -> Result<usize, MappingError> {
        let pairs = read_pairs(reader)?;
        Ok(pairs.iter().filter(|(s, c)| self.add_pending(s, c)).count())
    }
}

fn read_pairs(reader: impl Read) -> Result<Vec<(String, String)>, MappingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| MappingError::Row {
            row: i + 1,
            msg: e.to_string(),
        })?;
        match (rec.get(0), rec.get(1)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => out.push((a.to_string(), b.to_string())),
            _ => {
                return Err(MappingError::Row {
                    row: i + 1,
                    msg: "expected surface,canonical".into(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiseaseMethod {
    Table,
    Miss,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseMapping {
    pub standard: String,
    pub method: DiseaseMethod,
    /// The model could not be reached; try again later.
    pub retry_later: bool,
}

pub fn map_disease(name: &str, table: &DiseaseSynonymTable) -> DiseaseMapping {
    match table.lookup(name) {
        Some(c) => DiseaseMapping {
            standard: c.to_string(),
            method: DiseaseMethod::Table,
            retry_later: false,
        },
        None => DiseaseMapping {
            standard: OTHERS.to_string(),
            method: DiseaseMethod::Miss,
            retry_later: false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct TextShot {
    input: String,
    output: String,
}

/// Prompts and settings for the mapping fallbacks.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingPrompts {
    pub disease_system: String,
    pub disease_few_shot: Vec<(String, String)>,
    pub location_system: String,
    pub location_few_shot: Vec<(String, String)>,
    pub model: String,
    pub vote_k: usize,
    pub vote_temperature: f64,
}

impl MappingPrompts {
    pub fn bundled() -> Self {
        let shots = |raw: &str| -> Vec<(String, String)> {
            let v: Vec<TextShot> = serde_json::from_str(raw).expect("bundled few-shot parses");
            v.into_iter().map(|s| (s.input, s.output)).collect()
        };
        Self {
            disease_system: DISEASE_SYSTEM.trim_end().to_string(),
            disease_few_shot: shots(DISEASE_FEW_SHOT),
            location_system: LOCATION_SYSTEM.trim_end().to_string(),
            location_few_shot: shots(LOCATION_FEW_SHOT),
            model: crate::extract::llm::DEFAULT_MODEL.to_string(),
            vote_k: DEFAULT_VOTE_K,
            vote_temperature: DEFAULT_VOTE_TEMPERATURE,
        }
    }

    fn messages(system: String, shots: &[(String, String)], input: &str) -> Vec<ChatMessage> {
        let mut m = vec![ChatMessage::system(system)];
        for (i, o) in shots {
            m.push(ChatMessage::user(i));
            m.push(ChatMessage::assistant(o));
        }
        m.push(ChatMessage::user(input));
        m
    }

    pub fn disease_request(&self, name: &str, canonical: &[String]) -> ChatRequest {
        let system = self.disease_system.replace(DISEASE_LIST_SLOT, &canonical.join(", "));
        ChatRequest {
            model: self.model.clone(),
            messages: Self::messages(system, &self.disease_few_shot, name),
            temperature: 0.0,
        }
    }

    pub fn location_request(&self, text: &str) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: Self::messages(self.location_system.clone(), &self.location_few_shot, text),
            temperature: self.vote_temperature,
        }
    }
}

/// Model fallback for a disease the table missed. Accepted answers other
/// than `Others` are queued as pending synonyms.
pub fn map_disease_llm(
    name: &str,
    table: &DiseaseSynonymTable,
    provider: &dyn ChatProvider,
    prompts: &MappingPrompts,
    retry: &RetryPolicy,
) -> DiseaseMapping {
    let request = prompts.disease_request(name, table.canonical());
    match retry.run(|| provider.complete(&request)) {
        Ok(answer) => {
            let standard = table.validate_answer(&answer).unwrap_or_else(|| OTHERS.to_string());
            if standard != OTHERS {
                table.add_pending(name, &standard);
            }
            DiseaseMapping {
                standard,
                method: DiseaseMethod::Llm,
                retry_later: false,
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, disease = name, "disease mapping provider failed");
            DiseaseMapping {
                standard: OTHERS.to_string(),
                method: DiseaseMethod::Miss,
                retry_later: true,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationStatus {
    Mapped,
    Ambiguous,
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationMapping {
    pub location: LocationRef,
    pub status: LocationStatus,
}

impl LocationMapping {
    fn new(state: &str, district: &str, subdistrict: &str, status: LocationStatus) -> Self {
        Self {
            location: LocationRef {
                state: state.into(),
                district: district.into(),
                subdistrict: subdistrict.into(),
            },
            status,
        }
    }

    fn unmapped() -> Self {
        Self::new("", "", "", LocationStatus::Unmapped)
    }
}

fn token_nodes(gazetteer: &Gazetteer, token: &str) -> Vec<NodeId> {
    let direct = gazetteer.lookup(token);
    if !direct.is_empty() {
        return direct.to_vec();
    }
    // "Surguja district", "Parpatia village of Mainpat"
    gazetteer
        .spot(token)
        .iter()
        .flat_map(|k| gazetteer.lookup(k).iter().copied())
        .collect()
}

fn single<'a>(values: impl Iterator<Item = &'a str>) -> Result<Option<&'a str>, ()> {
    let set: BTreeSet<&str> = values.filter(|v| !v.is_empty()).collect();
    match set.len() {
        0 => Ok(None),
        1 => Ok(set.into_iter().next()),
        _ => Err(()),
    }
}

/// Assigns a comma-separated location to the hierarchy, keeping the deepest
/// level that has exactly one candidate.
pub fn map_location(raw_location: &str, gazetteer: &Gazetteer) -> LocationMapping {
    let nodes: Vec<NodeId> = raw_location
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .flat_map(|t| token_nodes(gazetteer, t))
        .collect();
    let states: BTreeSet<NodeId> = nodes
        .iter()
        .copied()
        .filter(|&n| gazetteer.node(n).level == Level::State)
        .collect();
    if states.len() > 1 {
        return LocationMapping::new("", "", "", LocationStatus::Ambiguous);
    }
    let scope = states.first().copied();
    let refs: Vec<LocationRef> = nodes
        .iter()
        .copied()
        .filter(|&n| gazetteer.node(n).level != Level::State)
        .filter(|&n| scope.is_none_or(|s| gazetteer.is_within(n, s)))
        .map(|n| gazetteer.location_ref(n))
        .collect();
    let state = match scope {
        Some(s) => gazetteer.node(s).name.as_str(),
        None => match single(refs.iter().map(|r| r.state.as_str())) {
            Ok(Some(s)) => s,
            Ok(None) => return LocationMapping::unmapped(),
            Err(()) => return LocationMapping::new("", "", "", LocationStatus::Ambiguous),
        },
    };
    let district = match single(refs.iter().map(|r| r.district.as_str())) {
        Ok(Some(d)) => d,
        Ok(None) => return LocationMapping::new(state, "", "", LocationStatus::Mapped),
        Err(()) => return LocationMapping::new(state, "", "", LocationStatus::Ambiguous),
    };
    let subs = refs.iter().filter(|r| r.district == district).map(|r| r.subdistrict.as_str());
    match single(subs) {
        Ok(sub) => LocationMapping::new(state, district, sub.unwrap_or(""), LocationStatus::Mapped),
        Err(()) => LocationMapping::new(state, district, "", LocationStatus::Ambiguous),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LlmLocation {
    Accepted { state: String, district: String },
    International,
    Blank { retry_later: bool },
}

/// One model answer reduced to casefolded `(state, district)`.
fn parse_location_answer(raw: &str) -> Option<(String, String)> {
    let trimmed = raw.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.');
    if trimmed.eq_ignore_ascii_case(INTERNATIONAL) {
        return Some((INTERNATIONAL.to_lowercase(), String::new()));
    }
    let items = first_array(raw).or_else(|| first_array(&requote(raw)))?;
    let obj = items.first()?.as_object()?;
    let field = |name: &str| -> String {
        obj.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(name))
            .and_then(|(_, v)| match v {
                Value::String(s) => Some(phrase_key(s)),
                _ => None,
            })
            .unwrap_or_default()
    };
    Some((field("state"), field("district")))
}

/// Consistency vote over `k` samples of the location prompt.
pub fn vote(answers: &[Option<(String, String)>]) -> Option<(String, String)> {
    let first = answers.first()?.as_ref()?;
    answers
        .iter()
        .all(|a| a.as_ref() == Some(first))
        .then(|| first.clone())
}

pub fn map_location_llm(
    article: &Article,
    gazetteer: &Gazetteer,
    provider: &dyn ChatProvider,
    prompts: &MappingPrompts,
    retry: &RetryPolicy,
) -> LlmLocation {
    let request = prompts.location_request(article.english_text());
    let mut answers = Vec::with_capacity(prompts.vote_k);
    for _ in 0..prompts.vote_k.max(1) {
        match retry.run(|| provider.complete(&request)) {
            Ok(raw) => answers.push(parse_location_answer(&raw)),
            Err(e) => {
                tracing::warn!(error = %e, article = %article.id, "location mapping provider failed");
                return LlmLocation::Blank { retry_later: true };
            }
        }
    }
    let Some((state, district)) = vote(&answers) else {
        return LlmLocation::Blank { retry_later: false };
    };
    if state == INTERNATIONAL.to_lowercase() {
        return LlmLocation::International;
    }
    // hallucination guard: both levels must exist in the gazetteer
    let Some(state_id) = gazetteer.state_named(&state) else {
        return LlmLocation::Blank { retry_later: false };
    };
    let district = if district.contains(',') {
        String::new()
    } else {
        gazetteer
            .child_named(state_id, &district)
            .map(|d| gazetteer.node(d).name.clone())
            .unwrap_or_default()
    };
    LlmLocation::Accepted {
        state: gazetteer.node(state_id).name.clone(),
        district,
    }
}

/// Why an event left the mapped stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub event_id: EventId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum MapOutcome {
    Mapped { event: MappedEvent, retry_later: bool },
    Dropped(Dropped),
}

/// Tables, gazetteer and optional model fallback used by [`map_event`].
pub struct Mapper {
    pub table: DiseaseSynonymTable,
    pub gazetteer: Arc<Gazetteer>,
    pub chat: Option<Box<dyn ChatProvider>>,
    pub prompts: MappingPrompts,
    pub retry: RetryPolicy,
    disease_cache: Mutex<HashMap<String, DiseaseMapping>>,
}

impl Mapper {
    pub fn new(table: DiseaseSynonymTable, gazetteer: Arc<Gazetteer>) -> Self {
        Self {
            table,
            gazetteer,
            chat: None,
            prompts: MappingPrompts::bundled(),
            retry: RetryPolicy::immediate(1),
            disease_cache: Mutex::default(),
        }
    }

    pub fn with_chat(mut self, chat: Box<dyn ChatProvider>) -> Self {
        self.chat = Some(chat);
        self
    }

    pub fn with_prompts(mut self, prompts: MappingPrompts) -> Self {
        self.prompts = prompts;
        self
    }

    fn disease(&self, name: &str) -> DiseaseMapping {
        let hit = map_disease(name, &self.table);
        let Some(chat) = self.chat.as_deref() else {
            return hit;
        };
        if hit.method == DiseaseMethod::Table {
            return hit;
        }
        let key = phrase_key(name);
        if let Some(m) = self.disease_cache.lock().expect("cache poisoned").get(&key) {
            return m.clone();
        }
        let m = map_disease_llm(name, &self.table, chat, &self.prompts, &self.retry);
        if !m.retry_later {
            self.disease_cache.lock().expect("cache poisoned").insert(key, m.clone());
        }
        m
    }

    pub fn map(&self, raw: &RawEvent, article: Option<&Article>) -> MapOutcome {
        map_event(raw, article, self)
    }
}

pub fn map_event(raw: &RawEvent, article: Option<&Article>, mapper: &Mapper) -> MapOutcome {
    let drop = |reason: &str| {
        MapOutcome::Dropped(Dropped {
            event_id: raw.id(),
            reason: reason.to_string(),
        })
    };
    if raw.location.trim().eq_ignore_ascii_case(INTERNATIONAL) {
        return drop("international");
    }
    let disease = mapper.disease(&raw.disease);
    let mut retry_later = disease.retry_later;
    let mut loc = map_location(&raw.location, &mapper.gazetteer);
    let mut location_llm = false;
    if loc.status != LocationStatus::Mapped {
        if let (Some(chat), Some(article)) = (mapper.chat.as_deref(), article) {
            match map_location_llm(article, &mapper.gazetteer, chat, &mapper.prompts, &mapper.retry) {
                LlmLocation::International => return drop("international"),
                LlmLocation::Accepted { state, district } => {
                    // keep the table's partial answer if the model contradicts it
                    if loc.location.state.is_empty() || loc.location.state == state {
                        let keep_district = !loc.location.district.is_empty() && district.is_empty();
                        loc = LocationMapping::new(
                            &state,
                            if keep_district { &loc.location.district } else { &district },
                            "",
                            LocationStatus::Mapped,
                        );
                        location_llm = true;
                    }
                }
                LlmLocation::Blank { retry_later: r } => retry_later |= r,
            }
        }
    }
    let mapping_method = if disease.method == DiseaseMethod::Llm || location_llm {
        MappingMethod::Llm
    } else if disease.method == DiseaseMethod::Miss && loc.status == LocationStatus::Unmapped {
        MappingMethod::Unmapped
    } else {
        MappingMethod::Table
    };
    let LocationRef {
        state,
        district,
        subdistrict,
    } = loc.location;
    MapOutcome::Mapped {
        event: MappedEvent {
            raw: raw.clone(),
            standard_disease: disease.standard,
            state,
            district,
            subdistrict,
            mapping_method,
            international: false,
        },
        retry_later,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fake::ScriptedChat;
    use crate::gazetteer::tests::fixture as gazetteer;
    use crate::model::{ArticleId, Extractor, Incident, IncidentType};
    use crate::provider::ProviderError;
    use chrono::Utc;
    use proptest::prelude::*;

    pub(crate) const CANONICAL: &[&str] = &[
        "Acute Diarrhoeal Disease",
        "Bird flu",
        "Cardiac arrest",
        "Cholera",
        "COVID-19",
        "Dengue",
        "Food Poisoning",
        "Malaria",
        "Nipah",
        "Pneumonia",
    ];

    pub(crate) fn table() -> DiseaseSynonymTable {
        DiseaseSynonymTable::new(
            CANONICAL.iter().copied(),
            [
                ("lung fever", "Pneumonia"),
                ("corona", "COVID-19"),
                ("coronavirus", "COVID-19"),
                ("heart attack", "Cardiac arrest"),
                ("diarrhea", "Acute Diarrhoeal Disease"),
            ],
        )
        .unwrap()
    }

    fn raw(disease: &str, location: &str) -> RawEvent {
        RawEvent {
            disease: disease.into(),
            location: location.into(),
            incident: Incident::Case,
            incident_type: IncidentType::New,
            number: Some(3),
            article_id: ArticleId::from("a"),
            extractor: Extractor::Llm,
            confidence: None,
        }
    }

    fn article(text: &str) -> Article {
        Article::new("https://news.example/a", None, Utc::now(), crate::Language::En, text, "").unwrap()
    }

    #[test]
    fn disease_table_examples() {
        let t = table();
        assert_eq!(map_disease("Lung Fever", &t).standard, "Pneumonia");
        assert_eq!(map_disease("Cholera Infection", &t).standard, "Cholera");
        assert_eq!(map_disease("Cholera Infectious Disease", &t).standard, "Cholera");
        assert_eq!(map_disease("Nipah outbreak", &t).standard, "Nipah");
        let miss = map_disease("Cricket Fever", &t);
        assert_eq!((miss.standard.as_str(), miss.method), (OTHERS, DiseaseMethod::Miss));
        assert!(DiseaseSynonymTable::new(["Dengue"], [("x", "Zika")]).is_err());
    }

    fn answer_by_input() -> ScriptedChat {
        ScriptedChat::new(|req| {
            let input = req.messages.last().unwrap().content.clone();
            Ok(match input.as_str() {
                "Diarrhoea outbreak" => "Acute Diarrhoeal Disease",
                "Bird flu (H5N1)" => "Bird flu",
                "Influenza-like thing" => "Influenza-like thing",
                _ => "Others",
            }
            .to_string())
        })
    }

    #[test]
    fn disease_llm_examples() {
        let t = table();
        let p = MappingPrompts::bundled();
        let chat = answer_by_input();
        let r = RetryPolicy::immediate(1);
        assert_eq!(map_disease_llm("Diarrhoea outbreak", &t, &chat, &p, &r).standard, "Acute Diarrhoeal Disease");
        assert_eq!(map_disease_llm("Bird flu (H5N1)", &t, &chat, &p, &r).standard, "Bird flu");
        assert_eq!(map_disease_llm("Cricket Fever", &t, &chat, &p, &r).standard, OTHERS);
        assert_eq!(map_disease_llm("Influenza-like thing", &t, &chat, &p, &r).standard, OTHERS);
        assert_eq!(t.pending().len(), 2);
        assert!(t.lookup("Diarrhoea outbreak").is_none(), "pending entries are not live");
        let down = ScriptedChat::new(|_| Err(ProviderError::Unavailable("x".into())));
        let m = map_disease_llm("Whatever", &t, &down, &p, &r);
        assert!(m.retry_later && m.standard == OTHERS);

        let log = chat.log();
        let sys = &log.lock().unwrap()[0].messages[0].content;
        assert!(sys.contains("Acute Diarrhoeal Disease, Bird flu"));
        assert!(!sys.contains(DISEASE_LIST_SLOT));
    }

    #[test]
    fn promotion() {
        let mut t = table();
        assert!(t.add_pending("Bird flu (H5N1)", "Bird flu"));
        assert_eq!(t.promote("bird flu (h5n1)").as_deref(), Some("Bird flu"));
        assert_eq!(t.lookup("Bird flu (H5N1)"), Some("Bird flu"));
        assert!(t.pending().is_empty());
        let mut out = Vec::new();
        t.write_synonyms(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("bird flu h5n1,Bird flu"));
    }

    #[test]
    fn location_examples() {
        let g = gazetteer();
        let m = map_location("Mainpat, Chhattisgarh", &g);
        assert_eq!(m.location, LocationRef {
            state: "Chhattisgarh".into(),
            district: "Surguja".into(),
            subdistrict: "Mainpat".into()
        });
        assert_eq!(m.status, LocationStatus::Mapped);

        let a = map_location("Aurangabad", &g);
        assert_eq!((a.location, a.status), (LocationRef::default(), LocationStatus::Ambiguous));

        let p = map_location("Pune", &g);
        assert_eq!((p.location.state.as_str(), p.location.district.as_str()), ("Maharashtra", "Pune"));

        assert_eq!(map_location("Aurangabad, Bihar", &g).location.state, "Bihar");
        assert_eq!(map_location("Narnia", &g).status, LocationStatus::Unmapped);
        assert_eq!(map_location("India", &g).status, LocationStatus::Unmapped);
        let two = map_location("Gaya, Patna", &g);
        assert_eq!(
            (two.location.state.as_str(), two.location.district.as_str(), two.status),
            ("Bihar", "", LocationStatus::Ambiguous)
        );
        assert_eq!(map_location("Pune, Bihar", &g).location.district, "");
        assert_eq!(map_location("Surguja district", &g).location.district, "Surguja");
    }

    fn loc_chat(replies: Vec<&str>) -> ScriptedChat {
        ScriptedChat::sequence(replies.into_iter().map(String::from).collect())
    }

    #[test]
    fn location_llm_examples() {
        let g = gazetteer();
        let p = MappingPrompts::bundled();
        let r = RetryPolicy::immediate(1);
        let puttu = article("Four members of the same family fell ill after consuming wild puttu in Parpatia village");
        let chat = loc_chat(vec![r#"[{"State": "Chhattisgarh", "District": "Surguja"}]"#]);
        assert_eq!(
            map_location_llm(&puttu, &g, &chat, &p, &r),
            LlmLocation::Accepted {
                state: "Chhattisgarh".into(),
                district: "Surguja".into()
            }
        );
        assert_eq!(chat.calls(), 3);
        assert!(chat.log().lock().unwrap().iter().all(|q| q.temperature == DEFAULT_VOTE_TEMPERATURE));

        let iowa = article("Bird flu hits Northwest Iowa dairies");
        let chat = loc_chat(vec![r#"[{"State": "International", "District": ""}]"#]);
        assert_eq!(map_location_llm(&iowa, &g, &chat, &p, &r), LlmLocation::International);
        let chat = loc_chat(vec!["International"]);
        assert_eq!(map_location_llm(&iowa, &g, &chat, &p, &r), LlmLocation::International);

        let chat = loc_chat(vec![
            r#"[{"State": "Bihar", "District": "Gaya"}]"#,
            r#"[{"State": "bihar", "District": "gaya"}]"#,
            r#"[{"State": "Bihar", "District": "Patna"}]"#,
        ]);
        assert_eq!(map_location_llm(&puttu, &g, &chat, &p, &r), LlmLocation::Blank { retry_later: false });

        let chat = loc_chat(vec![r#"[{"State": "Bihar", "District": "Pune"}]"#]);
        assert_eq!(
            map_location_llm(&puttu, &g, &chat, &p, &r),
            LlmLocation::Accepted {
                state: "Bihar".into(),
                district: String::new()
            }
        );
        let down = ScriptedChat::new(|_| Err(ProviderError::Unavailable("x".into())));
        assert_eq!(map_location_llm(&puttu, &g, &down, &p, &r), LlmLocation::Blank { retry_later: true });
    }

    fn mapped(o: MapOutcome) -> MappedEvent {
        match o {
            MapOutcome::Mapped { event, .. } => event,
            other => panic!("expected mapped, got {other:?}"),
        }
    }

    #[test]
    fn event_examples() {
        let mapper = Mapper::new(table(), Arc::new(gazetteer()));
        let e = mapped(mapper.map(&raw("Mysterious Disease", "Eluru"), None));
        assert_eq!(
            (e.standard_disease.as_str(), e.state.as_str(), e.district.as_str()),
            (OTHERS, "Andhra Pradesh", "Eluru")
        );
        let c = mapped(mapper.map(&raw("Corona", "India"), None));
        assert_eq!((c.standard_disease.as_str(), c.state.as_str()), ("COVID-19", ""));
        assert!(matches!(mapper.map(&raw("Corona", "International"), None), MapOutcome::Dropped(_)));

        let chat = ScriptedChat::new(|_| Ok(r#"[{"State": "International", "District": ""}]"#.into()));
        let mapper = Mapper::new(table(), Arc::new(gazetteer())).with_chat(Box::new(chat));
        let o = mapper.map(&raw("Bird flu", "Iowa"), Some(&article("Bird flu hits Northwest Iowa dairies")));
        assert!(matches!(o, MapOutcome::Dropped(d) if d.reason == "international"));
    }

    #[test]
    fn table_hit_makes_no_call() {
        let chat = ScriptedChat::new(|_| Ok("Others".into()));
        let log = chat.log();
        let mapper = Mapper::new(table(), Arc::new(gazetteer())).with_chat(Box::new(chat));
        let e = mapped(mapper.map(&raw("Cholera Infection", "Pune"), Some(&article("x"))));
        assert_eq!(e.mapping_method, MappingMethod::Table);
        assert!(log.lock().unwrap().is_empty());
    }

    const SURFACES: &[&str] = &[
        "Mainpat", "Chhattisgarh", "Surguja", "Ambikapur", "Aurangabad", "Pune", "Poona", "Bihar", "Gaya", "Patna",
        "Maharashtra", "Kerala", "Calicut", "Malappuram", "HP", "Himachal", "Eluru", "Narnia", "India", "district",
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn location_output_is_in_hierarchy(parts in proptest::sample::subsequence(SURFACES.to_vec(), 0..5), shuffle in any::<u64>()) {
            let g = gazetteer();
            let mut parts = parts;
            let n = parts.len().max(1);
            parts.rotate_left((shuffle as usize) % n);
            let m = map_location(&parts.join(", "), &g);
            prop_assert!(g.contains(&m.location), "{:?}", m);
            let e = MappedEvent {
                raw: raw("x", "y"),
                standard_disease: OTHERS.into(),
                state: m.location.state.clone(),
                district: m.location.district.clone(),
                subdistrict: m.location.subdistrict.clone(),
                mapping_method: MappingMethod::Table,
                international: false,
            };
            prop_assert!(e.is_hierarchy_consistent());
        }

        #[test]
        fn disease_output_in_list(name in "[A-Za-z]{1,10}( (infection|disease|outbreak|fever|[a-z]{1,6})){0,3}") {
            let t = table();
            let m = map_disease(&name, &t);
            prop_assert!(m.standard == OTHERS || t.is_canonical(&m.standard));
        }

        #[test]
        fn disease_idempotent_on_canonical(i in 0usize..10) {
            let t = table();
            let c = CANONICAL[i];
            prop_assert_eq!(map_disease(c, &t).standard, c);
            let again = map_disease(&map_disease(c, &t).standard, &t).standard;
            prop_assert_eq!(again, c);
        }

        #[test]
        fn vote_order_independent(
            answers in proptest::collection::vec(proptest::option::of(prop_oneof![
                Just(("bihar".to_string(), "gaya".to_string())),
                Just(("bihar".to_string(), "patna".to_string())),
            ]), 1..5),
            rot in 0usize..5,
        ) {
            let mut permuted = answers.clone();
            let n = permuted.len();
            permuted.rotate_left(rot % n);
            permuted.reverse();
            prop_assert_eq!(vote(&answers), vote(&permuted));
        }
    }
}
