//! Model-provider plumbing shared by every stage that calls out to a model.
//!
//! Each stage defines its own provider trait next to the code that uses it.
//! This module holds what they share: the error type, retry with backoff,
//! a JSON-over-HTTP endpoint, and the chat-completion contract together with
//! its record/replay implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Transient failure: timeouts, connection errors, 5xx and 429 responses.
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests and fakes.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    /// Delays double after each retryable failure, capped at `max_delay`.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.max_attempts.max(1);
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    tracing::debug!(attempt, error = %e, "retrying provider call");
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    delay = (delay * 2).min(self.max_delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// A JSON-over-HTTP model endpoint with optional bearer-token auth.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(30),
        }
    }

    /// Reads the bearer token from an environment variable, if set.
    pub fn with_token_env(mut self, var: &str) -> Self {
        self.token = std::env::var(var).ok().filter(|t| !t.is_empty());
        self
    }

    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut request = agent.post(&self.url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(classify_http_error)?;
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| ProviderError::Rejected(format!("bad response body from {}: {e}", self.url)))
    }
}

fn classify_http_error(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ProviderError::Unavailable(format!("http status {code}"))
        }
        ureq::Error::StatusCode(code) => ProviderError::Rejected(format!("http status {code}")),
        other => ProviderError::Unavailable(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Stable hash of the request, used as the replay fixture key.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("chat request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Serialize)]
struct ChatWire<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
}

/// Chat provider speaking `{model, messages, temperature} -> {text}`.
pub struct HttpChatProvider {
    endpoint: HttpEndpoint,
}

impl HttpChatProvider {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

impl ChatProvider for HttpChatProvider {
    fn name(&self) -> &str {
        "http-chat"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let reply: ChatReply = self.endpoint.post_json(&ChatWire {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
        })?;
        Ok(reply.text)
    }
}

/// On-disk replay fixture: request fingerprint to one or more responses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub version: u32,
    pub responses: BTreeMap<String, Vec<String>>,
}

impl ReplayFixture {
    pub const VERSION: u32 = 1;

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| ProviderError::Rejected(format!("cannot read replay fixture {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| ProviderError::Rejected(format!("bad replay fixture {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        fs::write(path, body)
    }
}

/// Serves recorded responses. Repeated identical requests walk through the
/// recorded list and then keep returning its last entry.
pub struct ReplayChat {
    fixture: ReplayFixture,
    cursor: Mutex<BTreeMap<String, usize>>,
}

impl ReplayChat {
    pub fn new(fixture: ReplayFixture) -> Self {
        Self {
            fixture,
            cursor: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(ReplayFixture::load(path)?))
    }
}

impl ChatProvider for ReplayChat {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = request.fingerprint();
        let responses = self
            .fixture
            .responses
            .get(&key)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| ProviderError::ReplayMiss(key.clone()))?;
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let pos = cursor.entry(key).or_insert(0);
        let out = responses[(*pos).min(responses.len() - 1)].clone();
        *pos += 1;
        Ok(out)
    }
}

/// Wraps a live provider and captures every response for later replay.
pub struct RecordingChat<P> {
    inner: P,
    recorded: Mutex<ReplayFixture>,
    path: PathBuf,
}

impl<P: ChatProvider> RecordingChat<P> {
    /// Starts from the existing fixture at `path` when present.
    pub fn new(inner: P, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let mut fixture = ReplayFixture::load(&path).unwrap_or_default();
        fixture.version = ReplayFixture::VERSION;
        Self {
            inner,
            recorded: Mutex::new(fixture),
            path,
        }
    }

    pub fn save(&self) -> std::io::Result<()> {
        self.recorded.lock().expect("recorder poisoned").save(&self.path)
    }

    pub fn fixture(&self) -> ReplayFixture {
        self.recorded.lock().expect("recorder poisoned").clone()
    }
}

impl<P: ChatProvider> ChatProvider for RecordingChat<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let text = self.inner.complete(request)?;
        let mut recorded = self.recorded.lock().expect("recorder poisoned");
        let entry = recorded.responses.entry(request.fingerprint()).or_default();
        // identical requests after the first are recorded only if the answer differs
        if entry.last() != Some(&text) {
            entry.push(text.clone());
        }
        Ok(text)
    }
}
