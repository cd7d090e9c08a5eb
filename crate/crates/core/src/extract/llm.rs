//! Prompted extraction with a chat model, plus a numberless second pass
//! when the first pass finds nothing.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::{Article, ArticleId, EventDraft, EventId, Extractor, RawEvent};
use crate::numbers::find_numbers;
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, ProviderError, RetryPolicy};

pub const EVENT_SYSTEM: &str = include_str!("../../assets/prompts/event_system.txt");
pub const EVENT_NUMBERLESS: &str = include_str!("../../assets/prompts/event_numberless.txt");
pub const EVENT_FEW_SHOT: &str = include_str!("../../assets/prompts/event_few_shot.json");

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_MAX_RETRIES: u32 = 2;
/// Location value the prompts use for events outside India.
pub const INTERNATIONAL: &str = "International";

const KEY_DISEASE: &str = "Disease";
const KEY_LOCATION: &str = "Location";
const KEY_INCIDENT: &str = "Incident (case or death)";
const KEY_INCIDENT_TYPE: &str = "Incident Type (new or total)";
const KEY_NUMBER: &str = "Number";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("chat provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no JSON event list in response")]
    UnparseableResponse,
    #[error("prompt configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::ProviderUnavailable(_))
    }
}

impl From<ProviderError> for LlmError {
    fn from(e: ProviderError) -> Self {
        LlmError::ProviderUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    pub output: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub system_prompt: String,
    pub few_shot: Vec<FewShotExample>,
    pub mode: PromptMode,
    pub numberless_prompt: String,
    pub model: String,
    pub temperature: f64,
}

impl PromptConfig {
    /// The shipped prompts in few-shot mode at temperature 0.
    pub fn bundled() -> Self {
        Self {
            system_prompt: EVENT_SYSTEM.trim_end().to_string(),
            few_shot: serde_json::from_str(EVENT_FEW_SHOT).expect("bundled few-shot examples parse"),
            mode: PromptMode::FewShot,
            numberless_prompt: EVENT_NUMBERLESS.trim_end().to_string(),
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
        }
    }

    pub fn zero_shot(mut self) -> Self {
        self.mode = PromptMode::ZeroShot;
        self
    }

    /// Overrides prompts from `event_system.txt`, `event_numberless.txt` and
    /// `event_few_shot.json` in `dir`, where present.
    pub fn with_prompt_dir(mut self, dir: &Path) -> Result<Self, LlmError> {
        let read = |name: &str| -> Result<Option<String>, LlmError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path)
                .map(Some)
                .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
        };
        if let Some(s) = read("event_system.txt")? {
            self.system_prompt = s.trim_end().to_string();
        }
        if let Some(s) = read("event_numberless.txt")? {
            self.numberless_prompt = s.trim_end().to_string();
        }
        if let Some(s) = read("event_few_shot.json")? {
            self.few_shot = serde_json::from_str(&s).map_err(|e| LlmError::Config(format!("few-shot: {e}")))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.mode == PromptMode::FewShot && self.few_shot.is_empty() {
            return Err(LlmError::Config("few-shot mode needs at least one example".into()));
        }
        for key in [KEY_DISEASE, KEY_LOCATION, "Incident", KEY_NUMBER] {
            if !self.system_prompt.contains(key) {
                return Err(LlmError::Config(format!("system prompt does not declare {key:?}")));
            }
        }
        Ok(())
    }

    fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: self.temperature,
        }
    }
}

/// `[system, (user, assistant) per example, user(article)]`.
pub fn build_messages(article: &Article, cfg: &PromptConfig) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::system(&cfg.system_prompt)];
    if cfg.mode == PromptMode::FewShot {
        for ex in &cfg.few_shot {
            out.push(ChatMessage::user(&ex.input));
            out.push(ChatMessage::assistant(
                serde_json::to_string(&ex.output).expect("few-shot output serializes"),
            ));
        }
    }
    out.push(ChatMessage::user(article.english_text()));
    out
}

/// Rewrites Python-style single-quoted strings as JSON strings. A quote
/// counts as a delimiter only next to structural characters, so apostrophes
/// inside words survive.
pub(crate) fn requote(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let prev_sig = |i: usize| chars[..i].iter().rev().find(|c| !c.is_whitespace()).copied();
    let next_sig = |i: usize| chars[i + 1..].iter().find(|c| !c.is_whitespace()).copied();
    let mut out = String::with_capacity(text.len());
    let mut in_single = false;
    let mut in_double = false;
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '"' if !in_single => {
                if !(i > 0 && chars[i - 1] == '\\') {
                    in_double = !in_double;
                }
                out.push(c);
            }
            '"' if in_single => out.push_str("\\\""),
            '\'' if !in_double => {
                let opening = !in_single && matches!(prev_sig(i), Some('{' | '[' | ',' | ':'));
                let closing = in_single && matches!(next_sig(i), Some(':' | ',' | '}' | ']') | None);
                if opening || closing {
                    in_single = !in_single;
                    out.push('"');
                } else {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

pub(crate) fn first_array(text: &str) -> Option<Vec<Value>> {
    for (i, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if items.iter().all(Value::is_object) {
                return Some(items);
            }
        }
    }
    None
}

fn canonical_key(key: &str) -> String {
    let key = key.split('(').next().unwrap_or("").trim().to_lowercase();
    key.replace(['_', '-'], " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

fn field_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn draft(item: &Map<String, Value>) -> Option<EventDraft> {
    let mut d = EventDraft::default();
    for (k, v) in item {
        match canonical_key(k).as_str() {
            "disease" => d.disease = field_text(v)?,
            "location" => d.location = field_text(v)?,
            "incident" => d.incident = field_text(v)?,
            "incident type" | "type" => d.incident_type = field_text(v).unwrap_or_default(),
            "number" | "count" => d.number = field_text(v),
            _ => {}
        }
    }
    Some(d)
}

/// Event drafts from a model response. Items that are not objects with the
/// expected fields are skipped.
pub fn parse_event_drafts(raw: &str) -> Result<Vec<EventDraft>, LlmError> {
    let items = first_array(raw)
        .or_else(|| first_array(&requote(raw)))
        .ok_or(LlmError::UnparseableResponse)?;
    Ok(items
        .iter()
        .filter_map(|v| v.as_object().and_then(draft))
        .collect())
}

/// Typed events from a model response. Malformed items are dropped.
pub fn parse_event_json(raw: &str, article_id: &ArticleId) -> Result<Vec<RawEvent>, LlmError> {
    Ok(parse_event_drafts(raw)?
        .iter()
        .filter_map(|d| match d.normalize(article_id, Extractor::Llm, None) {
            Ok(e) => Some(e),
            Err(err) => {
                tracing::debug!(error = %err, "skipping malformed event");
                None
            }
        })
        .collect())
}

/// Renders events in the response schema the prompts ask for.
pub fn render_events(events: &[RawEvent]) -> String {
    let items: Vec<Value> = events
        .iter()
        .map(|e| {
            let (kind, number) = match e.number {
                Some(n) => (e.incident_type.as_str(), n.to_string()),
                None => ("_", "_".to_string()),
            };
            serde_json::json!({
                KEY_DISEASE: e.disease,
                KEY_LOCATION: e.location,
                KEY_INCIDENT: e.incident.as_str(),
                KEY_INCIDENT_TYPE: kind,
                KEY_NUMBER: number,
            })
        })
        .collect();
    serde_json::to_string(&items).expect("events serialize")
}

/// Whether an event's count appears in the article in some written form.
pub fn verify_grounding(event: &RawEvent, article: &Article) -> bool {
    let Some(n) = event.number else { return true };
    find_numbers(&article.text).contains(&n) || find_numbers(article.english_text()).contains(&n)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmOutcome {
    pub events: Vec<RawEvent>,
    /// Responses stayed unparseable after every retry.
    pub parse_failed: bool,
    pub second_pass: bool,
    /// Numbered events whose count does not appear in the article.
    pub ungrounded: Vec<EventId>,
}

pub struct LlmExtractor {
    pub provider: Box<dyn ChatProvider>,
    pub config: PromptConfig,
    pub max_retries: u32,
    pub retry: RetryPolicy,
}

impl LlmExtractor {
    pub fn new(provider: Box<dyn ChatProvider>, config: PromptConfig) -> Self {
        Self {
            provider,
            config,
            max_retries: DEFAULT_MAX_RETRIES,
            retry: RetryPolicy::immediate(1),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn extract(&self, article: &Article) -> Result<LlmOutcome, LlmError> {
        extract_events_llm(article, &self.config, self.provider.as_ref(), self.max_retries, &self.retry)
    }
}

/// Calls the provider until the response parses, up to `1 + max_retries` times.
fn call(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    article_id: &ArticleId,
    max_retries: u32,
    retry: &RetryPolicy,
) -> Result<(Option<Vec<RawEvent>>, String), LlmError> {
    let mut last = String::new();
    for attempt in 0..=max_retries {
        last = retry.run(|| provider.complete(request))?;
        match parse_event_json(&last, article_id) {
            Ok(events) => return Ok((Some(events), last)),
            Err(_) => tracing::warn!(attempt, article = %article_id, "unparseable model response"),
        }
    }
    Ok((None, last))
}

pub fn extract_events_llm(
    article: &Article,
    cfg: &PromptConfig,
    provider: &dyn ChatProvider,
    max_retries: u32,
    retry: &RetryPolicy,
) -> Result<LlmOutcome, LlmError> {
    let mut messages = build_messages(article, cfg);
    let (first, reply) = call(provider, &cfg.request(messages.clone()), &article.id, max_retries, retry)?;
    let mut outcome = LlmOutcome::default();
    let events = match first {
        None => {
            outcome.parse_failed = true;
            Vec::new()
        }
        Some(events) if !events.is_empty() => events,
        Some(_) => {
            outcome.second_pass = true;
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(&cfg.numberless_prompt));
            let (second, _) = call(provider, &cfg.request(messages), &article.id, max_retries, retry)?;
            outcome.parse_failed = second.is_none();
            second.unwrap_or_default()
        }
    };
    let mut seen = HashSet::new();
    outcome.events = events
        .into_iter()
        .filter(|e| !e.location.eq_ignore_ascii_case(INTERNATIONAL))
        .filter(|e| seen.insert(e.tuple_key()))
        .collect();
    outcome.ungrounded = outcome
        .events
        .iter()
        .filter(|e| !verify_grounding(e, article))
        .map(RawEvent::id)
        .collect();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fake::ScriptedChat;
    use crate::model::{normalize_event, Incident, IncidentType};
    use crate::provider::Role;
    use chrono::Utc;
    use proptest::prelude::*;

    fn article(title: &str, description: &str) -> Article {
        Article::new("https://news.example/a", None, Utc::now(), crate::Language::En, title, description).unwrap()
    }

    #[test]
    fn bundled_prompt_shape() {
        let cfg = PromptConfig::bundled();
        cfg.validate().unwrap();
        assert_eq!(cfg.few_shot.len(), 4);
        assert!(cfg.system_prompt.starts_with("You are a renowned event extractor"));
        let a = article("Dengue in Pune", "12 new cases");
        let msgs = build_messages(&a, &cfg);
        assert_eq!(msgs.len(), 10);
        assert_eq!(msgs[0].role, Role::System);
        assert_eq!(msgs[4].content, "[]");
        assert!(msgs[9].content.contains(&a.text));
        assert_eq!(build_messages(&a, &cfg.clone().zero_shot()).len(), 2);
    }

    #[test]
    fn few_shot_outputs_parse_back() {
        let cfg = PromptConfig::bundled();
        let id = ArticleId::from("x");
        let e4 = parse_event_json(&serde_json::to_string(&cfg.few_shot[3].output).unwrap(), &id).unwrap();
        assert_eq!(e4.iter().map(|e| e.number).collect::<Vec<_>>(), vec![Some(906), Some(20), Some(531_814)]);
    }

    #[test]
    fn parse_examples() {
        let id = ArticleId::from("eluru");
        let eluru = r#"[{"Disease": "Mysterious Disease", "Location": "Eluru", "Incident (case or death)": "case", "Incident Type (new or total)": "new", "Number": "347"},
                       {"Disease": "Mysterious Disease", "Location": "Eluru", "Incident (case or death)": "death", "Incident Type (new or total)": "new", "Number": "1"}]"#;
        let ev = parse_event_json(eluru, &id).unwrap();
        assert_eq!(
            ev.iter().map(|e| (e.incident, e.number)).collect::<Vec<_>>(),
            vec![(Incident::Case, Some(347)), (Incident::Death, Some(1))]
        );
        assert!(parse_event_json("[]", &id).unwrap().is_empty());
        let fenced = "Here are the events: ```json\n[{\"Disease\": \"Dengue\", \"Location\": \"Pune\", \"Incident\": \"case\", \"Incident Type\": \"new\", \"Number\": 12}]\n```";
        assert_eq!(parse_event_json(fenced, &id).unwrap()[0].number, Some(12));
        assert_eq!(parse_event_json("no events here", &id), Err(LlmError::UnparseableResponse));
    }

    #[test]
    fn python_style_quotes() {
        let id = ArticleId::from("x");
        let raw = "[{'Disease': 'Mysterious Disease', 'Location': \"AP's Eluru\", 'Incident (case or death)': 'case', 'Incident Type (new or total)': 'new', 'Number': '347'}]";
        let ev = parse_event_json(raw, &id).unwrap();
        assert_eq!(ev[0].location, "AP's Eluru");
        let raw = "[{'Disease': 'Mysterious Disease', 'Location': 'AP's Eluru', 'Incident': 'case', 'Incident Type': 'new', 'Number': 347}]";
        assert_eq!(parse_event_json(raw, &id).unwrap()[0].location, "AP's Eluru");
    }

    #[test]
    fn malformed_items_skipped() {
        let id = ArticleId::from("x");
        let raw = r#"[{"Disease": "Dengue", "Location": "Pune", "Incident": "injury", "Number": "3"},
                     {"Disease": "Dengue", "Location": "Pune", "Incident": "death", "Incident Type": "new", "Number": "3"}]"#;
        assert_eq!(parse_event_json(raw, &id).unwrap().len(), 1);
    }

    #[test]
    fn grounding() {
        let eluru = article(
            "Mysterious Disease In AP's Eluru Claims 1 Life, 347 Falls Ill, Samples Sent To Delhi.",
            "",
        );
        let mut ev = parse_event_json(
            r#"[{"Disease": "x", "Location": "Eluru", "Incident": "case", "Incident Type": "new", "Number": "347"}]"#,
            &eluru.id,
        )
        .unwrap()
        .remove(0);
        assert!(verify_grounding(&ev, &eluru));
        ev.number = Some(99);
        assert!(!verify_grounding(&ev, &eluru));
        let covid = article("Toll increased to 5,31,814", "");
        ev.number = Some(531_814);
        assert!(verify_grounding(&ev, &covid));
    }

    #[test]
    fn second_pass_fires_only_on_empty() {
        let numberless = r#"[{"Disease": "Dengue", "Location": "Pune", "Incident": "case", "Incident Type": "_", "Number": "_"}]"#;
        let chat = ScriptedChat::sequence(vec!["[]".into(), numberless.into()]);
        let log = chat.log();
        let a = article("Dengue is on the rise in Pune", "");
        let out = extract_events_llm(&a, &PromptConfig::bundled(), &chat, 2, &RetryPolicy::immediate(1)).unwrap();
        assert!(out.second_pass);
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].incident_type, IncidentType::Unspecified);
        let log = log.lock().unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].messages.last().unwrap().content, PromptConfig::bundled().numberless_prompt);

        let chat = ScriptedChat::sequence(vec![numberless.replace("\"_\", \"Number\": \"_\"", "\"new\", \"Number\": \"4\"")]);
        let out = extract_events_llm(&a, &PromptConfig::bundled(), &chat, 2, &RetryPolicy::immediate(1)).unwrap();
        assert!(!out.second_pass);
        assert_eq!(chat.calls(), 1);
        assert_eq!(out.ungrounded, vec![out.events[0].id()]);
    }

    #[test]
    fn retries_then_flags() {
        let chat = ScriptedChat::sequence(vec!["sorry".into()]);
        let a = article("Dengue in Pune", "");
        let out = extract_events_llm(&a, &PromptConfig::bundled(), &chat, 2, &RetryPolicy::immediate(1)).unwrap();
        assert!(out.parse_failed);
        assert!(out.events.is_empty());
        assert_eq!(chat.calls(), 3);

        let chat = ScriptedChat::sequence(vec!["oops".into(), "[]".into(), "[]".into()]);
        let out = extract_events_llm(&a, &PromptConfig::bundled(), &chat, 2, &RetryPolicy::immediate(1)).unwrap();
        assert!(!out.parse_failed && out.second_pass);

        let down = ScriptedChat::new(|_| Err(ProviderError::Unavailable("503".into())));
        let err = extract_events_llm(&a, &PromptConfig::bundled(), &down, 2, &RetryPolicy::immediate(2)).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn international_dropped() {
        let raw = r#"[{"Disease": "Corona", "Location": "International", "Incident": "death", "Incident Type": "new", "Number": "21"}]"#;
        let chat = ScriptedChat::sequence(vec![raw.into(), "[]".into()]);
        let a = article("Corona turmoil in North Korea.. 21 people died of fever.", "");
        let out = extract_events_llm(&a, &PromptConfig::bundled(), &chat, 2, &RetryPolicy::immediate(1)).unwrap();
        assert!(out.events.is_empty());
    }

    fn events() -> impl Strategy<Value = Vec<RawEvent>> {
        let one = (
            "[A-Z][a-z]{1,8}( [A-Za-z]{1,8}){0,2}",
            "[A-Z][a-z]{1,8}(, [A-Z][a-z]{1,8})?",
            prop_oneof![Just(Incident::Case), Just(Incident::Death)],
            prop_oneof![Just(IncidentType::New), Just(IncidentType::Total)],
            proptest::option::of(0u64..10_000_000),
        )
            .prop_map(|(disease, location, incident, incident_type, number)| {
                normalize_event(RawEvent {
                    disease,
                    location,
                    incident,
                    incident_type,
                    number,
                    article_id: ArticleId::from("art"),
                    extractor: Extractor::Llm,
                    confidence: None,
                })
                .unwrap()
            });
        proptest::collection::vec(one, 0..5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn parse_render_roundtrip(evs in events()) {
            let back = parse_event_json(&render_events(&evs), &ArticleId::from("art")).unwrap();
            prop_assert_eq!(back, evs);
        }

        #[test]
        fn events_carry_article_id(evs in events(), url_n in 0u32..1000) {
            let rendered = render_events(&evs);
            let chat = ScriptedChat::sequence(vec![rendered, "[]".into()]);
            let a = Article::new(&format!("https://news.example/{url_n}"), None, Utc::now(), crate::Language::En, "t", "d").unwrap();
            let out = extract_events_llm(&a, &PromptConfig::bundled(), &chat, 0, &RetryPolicy::immediate(1)).unwrap();
            prop_assert!(out.events.iter().all(|e| e.article_id == a.id));
            prop_assert_eq!(out.second_pass, evs.is_empty());
        }
    }
}
