//! Article ingestion: source adapters, metadata extraction and the
//! domain / recency / language filter chain.
//!
//! Candidates are pulled from an adapter, pre-filtered on domain, recency
//! and URL duplicates in input order, then fetched and identified in
//! parallel. Per-item failures are reported in [`IngestReport::skipped`]
//! and never abort the run.

pub mod langid;
pub mod meta;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{Article, ArticleId, Language};
use crate::provider::{ProviderError, RetryPolicy};
use crate::web;

pub use langid::{LanguageGuess, LanguageIdentifier, NgramIdentifier};
pub use meta::{extract_meta, PageMeta};

/// Default recency window.
pub const DEFAULT_WINDOW_HOURS: i64 = 72;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("input is not an HTML document")]
    NotHtml,
    #[error("text is empty")]
    EmptyText,
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("invalid blocklist entry {entry:?} on line {line}")]
    InvalidBlocklist { line: usize, entry: String },
    #[error("invalid adapter config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::AdapterUnavailable(_))
    }
}

/// Registrable domains whose articles are dropped at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocklist {
    pub domains: BTreeSet<String>,
    pub updated_at: DateTime<Utc>,
}

impl Blocklist {
    pub fn new(domains: impl IntoIterator<Item = String>, updated_at: DateTime<Utc>) -> Result<Self, IngestError> {
        let mut set = BTreeSet::new();
        for (i, d) in domains.into_iter().enumerate() {
            let d = d.trim().trim_end_matches('.').to_lowercase();
            if !web::is_valid_domain(&d) {
                return Err(IngestError::InvalidBlocklist { line: i + 1, entry: d });
            }
            set.insert(d);
        }
        Ok(Self {
            domains: set,
            updated_at,
        })
    }

    /// Parses the plain-text format: one domain per line, `#` starts a comment.
    pub fn parse(text: &str, updated_at: DateTime<Utc>) -> Result<Self, IngestError> {
        let mut domains = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let entry = line.split('#').next().unwrap_or("").trim().trim_end_matches('.').to_lowercase();
            if entry.is_empty() {
                continue;
            }
            if !web::is_valid_domain(&entry) {
                return Err(IngestError::InvalidBlocklist { line: i + 1, entry });
            }
            domains.insert(entry);
        }
        Ok(Self { domains, updated_at })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
        let updated_at = fs::metadata(path)
            .and_then(|m| m.modified())
            .map(DateTime::<Utc>::from)
            .unwrap_or_else(|_| Utc::now());
        Self::parse(&text, updated_at)
    }

    pub fn empty() -> Self {
        Self {
            domains: BTreeSet::new(),
            updated_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    /// True when the host's registrable domain (or the host itself) is listed.
    pub fn contains(&self, domain_or_url: &str) -> bool {
        let host = web::host(domain_or_url).unwrap_or_default();
        let registrable = web::registrable_domain(&host).unwrap_or_default();
        self.domains.contains(&registrable) || self.domains.contains(&host)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# updated {}\n", self.updated_at.to_rfc3339());
        for d in &self.domains {
            out.push_str(d);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum DropReason {
    Blocklisted(String),
    Stale,
    UnsupportedLanguage(String),
    Duplicate,
    InvalidUrl(String),
    FetchFailed(String),
    NotHtml,
    EmptyText,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::Blocklisted(d) => write!(f, "blocklisted domain {d}"),
            DropReason::Stale => f.write_str("outside recency window"),
            DropReason::UnsupportedLanguage(l) => write!(f, "unsupported language {l}"),
            DropReason::Duplicate => f.write_str("duplicate url"),
            DropReason::InvalidUrl(u) => write!(f, "invalid url {u}"),
            DropReason::FetchFailed(e) => write!(f, "fetch failed: {e}"),
            DropReason::NotHtml => f.write_str("not html"),
            DropReason::EmptyText => f.write_str("no title or description"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

pub fn filter_domain(article: &Article, blocklist: &Blocklist) -> FilterDecision {
    if blocklist.contains(&article.url) || blocklist.contains(&article.domain) {
        FilterDecision::Drop(DropReason::Blocklisted(article.domain.clone()))
    } else {
        FilterDecision::Keep
    }
}

fn recent(published_at: Option<DateTime<Utc>>, now: DateTime<Utc>, window: Duration) -> bool {
    match published_at {
        Some(t) => t <= now && now - t <= window,
        None => true,
    }
}

/// Keeps articles published within `window` before `now`; undated articles are kept.
pub fn filter_recency(article: &Article, now: DateTime<Utc>, window: Duration) -> FilterDecision {
    if recent(article.published_at, now, window) {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop(DropReason::Stale)
    }
}

pub fn filter_language(article: &Article) -> FilterDecision {
    if article.language.is_supported() {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop(DropReason::UnsupportedLanguage(article.language.code().into()))
    }
}

/// Thread-safe set of article ids seen in the current run.
#[derive(Debug, Default)]
pub struct DedupSet {
    seen: Mutex<HashSet<ArticleId>>,
}

impl DedupSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true if the id was not yet present.
    pub fn insert_if_absent(&self, id: &ArticleId) -> bool {
        self.seen.lock().expect("dedup set poisoned").insert(id.clone())
    }

    pub fn len(&self) -> usize {
        self.seen.lock().expect("dedup set poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fetches raw page bytes.
pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, ProviderError>;
}

pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(timeout: StdDuration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent("epiwatch/0.1")
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(StdDuration::from_secs(20))
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, ProviderError> {
        let mut resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ProviderError::Unavailable(format!("{url}: HTTP {status}")));
        }
        if status >= 400 {
            return Err(ProviderError::Rejected(format!("{url}: HTTP {status}")));
        }
        resp.body_mut()
            .with_config()
            .limit(8 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    UrlListFile,
    FeedPoll,
    CustomSite,
}

/// A configured article source.
///
/// Config keys by kind:
/// - `url_list_file`: `path` to an NDJSON file of `{url, published_at?, html_path?}`.
/// - `feed_poll`: `url` of an RSS/Atom feed.
/// - `custom_site`: `url` of a listing page and `link_pattern`, a regex over absolute article links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceAdapter {
    pub name: String,
    pub kind: AdapterKind,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl SourceAdapter {
    pub fn url_list_file(name: &str, path: impl AsRef<Path>) -> Self {
        Self {
            name: name.into(),
            kind: AdapterKind::UrlListFile,
            config: BTreeMap::from([("path".into(), path.as_ref().display().to_string())]),
        }
    }

    fn key(&self, key: &str) -> Result<&str, IngestError> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| IngestError::Config(format!("adapter {:?} needs `{key}`", self.name)))
    }
}

/// One article URL produced by an adapter, before fetching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub url: String,
    pub published_at: Option<DateTime<Utc>>,
    /// Local copy of the page; fetched over the network when absent.
    pub html_path: Option<PathBuf>,
}

#[derive(Deserialize)]
struct UrlListLine {
    url: String,
    #[serde(default)]
    published_at: Option<DateTime<Utc>>,
    #[serde(default)]
    html_path: Option<PathBuf>,
}

/// Reads an NDJSON URL list. Unparseable lines are returned as skips.
pub fn read_url_list(path: &Path) -> Result<(Vec<Candidate>, Vec<Skipped>), IngestError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IngestError::AdapterUnavailable(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<UrlListLine>(line) {
            Ok(l) => out.push(Candidate {
                url: l.url,
                published_at: l.published_at,
                html_path: l.html_path.map(|p| if p.is_absolute() { p } else { base.join(p) }),
            }),
            Err(e) => {
                tracing::warn!(line = i + 1, error = %e, "skipping url-list line");
                skipped.push(Skipped {
                    url: format!("{}:{}", path.display(), i + 1),
                    reason: DropReason::InvalidUrl(e.to_string()),
                });
            }
        }
    }
    Ok((out, skipped))
}

fn feed_candidates(bytes: &[u8]) -> Result<Vec<Candidate>, IngestError> {
    let feed = feed_rs::parser::parse(bytes).map_err(|e| IngestError::AdapterUnavailable(format!("bad feed: {e}")))?;
    Ok(feed
        .entries
        .into_iter()
        .filter_map(|entry| {
            let url = entry.links.first()?.href.clone();
            Some(Candidate {
                url,
                published_at: entry.published.or(entry.updated),
                html_path: None,
            })
        })
        .collect())
}

fn listing_candidates(listing_url: &str, html: &[u8], pattern: &Regex) -> Vec<Candidate> {
    let doc = scraper::Html::parse_document(&String::from_utf8_lossy(html));
    let sel = scraper::Selector::parse("a[href]").expect("static selector");
    let base = url::Url::parse(listing_url).ok();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for a in doc.select(&sel) {
        let href = a.value().attr("href").unwrap_or_default();
        let resolved = match &base {
            Some(b) => b.join(href).map(|u| u.to_string()).unwrap_or_default(),
            None => href.to_string(),
        };
        if pattern.is_match(&resolved) && seen.insert(resolved.clone()) {
            out.push(Candidate {
                url: resolved,
                published_at: None,
                html_path: None,
            });
        }
    }
    out
}

/// An item the ingestor did not emit, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub url: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub articles: Vec<Article>,
    pub skipped: Vec<Skipped>,
}

/// Runs adapters through the filter chain.
pub struct Ingestor {
    pub blocklist: Blocklist,
    pub window: Duration,
    pub now: DateTime<Utc>,
    pub retry: RetryPolicy,
    languages: Box<dyn LanguageIdentifier>,
    fetcher: Box<dyn PageFetcher>,
}

impl Ingestor {
    pub fn new(
        blocklist: Blocklist,
        now: DateTime<Utc>,
        languages: Box<dyn LanguageIdentifier>,
        fetcher: Box<dyn PageFetcher>,
    ) -> Self {
        Self {
            blocklist,
            window: Duration::hours(DEFAULT_WINDOW_HOURS),
            now,
            retry: RetryPolicy::default(),
            languages,
            fetcher,
        }
    }

    pub fn with_window(mut self, window: Duration) -> Self {
        self.window = window;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, ProviderError> {
        self.retry.run(|| self.fetcher.fetch(url))
    }

    /// Lists the candidates an adapter currently offers.
    pub fn candidates(&self, adapter: &SourceAdapter) -> Result<(Vec<Candidate>, Vec<Skipped>), IngestError> {
        let unavailable = |e: ProviderError| IngestError::AdapterUnavailable(format!("{}: {e}", adapter.name));
        match adapter.kind {
            AdapterKind::UrlListFile => read_url_list(Path::new(adapter.key("path")?)),
            AdapterKind::FeedPoll => {
                let bytes = self.fetch(adapter.key("url")?).map_err(unavailable)?;
                Ok((feed_candidates(&bytes)?, Vec::new()))
            }
            AdapterKind::CustomSite => {
                let listing = adapter.key("url")?;
                let pattern = Regex::new(adapter.key("link_pattern")?)
                    .map_err(|e| IngestError::Config(format!("link_pattern: {e}")))?;
                let bytes = self.fetch(listing).map_err(unavailable)?;
                Ok((listing_candidates(listing, &bytes, &pattern), Vec::new()))
            }
        }
    }

    pub fn ingest(&self, adapter: &SourceAdapter) -> Result<IngestReport, IngestError> {
        self.ingest_with(adapter, &DedupSet::new())
    }

    /// Ingests one adapter, sharing duplicate suppression with other adapters of the run.
    pub fn ingest_with(&self, adapter: &SourceAdapter, seen: &DedupSet) -> Result<IngestReport, IngestError> {
        let (candidates, mut skipped) = self.candidates(adapter)?;

        // cheap filters first, in input order so duplicate resolution is deterministic
        let mut pending = Vec::new();
        for c in candidates {
            let skip = |reason| Skipped {
                url: c.url.clone(),
                reason,
            };
            if web::host(&c.url).is_none() || url::Url::parse(&c.url).is_err() {
                skipped.push(skip(DropReason::InvalidUrl(c.url.clone())));
            } else if self.blocklist.contains(&c.url) {
                let domain = web::registrable_domain(&c.url).unwrap_or_default();
                skipped.push(skip(DropReason::Blocklisted(domain)));
            } else if !recent(c.published_at, self.now, self.window) {
                skipped.push(skip(DropReason::Stale));
            } else if !seen.insert_if_absent(&ArticleId::from_url(&c.url)) {
                skipped.push(skip(DropReason::Duplicate));
            } else {
                pending.push(c);
            }
        }

        let results: Vec<Result<Article, Skipped>> = pending.par_iter().map(|c| self.build(c)).collect();
        let mut articles = Vec::new();
        for r in results {
            match r {
                Ok(a) => articles.push(a),
                Err(s) => {
                    tracing::debug!(url = %s.url, reason = %s.reason, "skipped");
                    skipped.push(s);
                }
            }
        }
        Ok(IngestReport { articles, skipped })
    }

    fn build(&self, c: &Candidate) -> Result<Article, Skipped> {
        let skip = |reason| Skipped {
            url: c.url.clone(),
            reason,
        };
        let html = match &c.html_path {
            Some(p) => fs::read(p).map_err(|e| skip(DropReason::FetchFailed(format!("{}: {e}", p.display()))))?,
            None => self.fetch(&c.url).map_err(|e| skip(DropReason::FetchFailed(e.to_string())))?,
        };
        let meta = extract_meta(&html).map_err(|_| skip(DropReason::NotHtml))?;
        let published_at = c.published_at.or(meta.published_at);
        let mut article = Article::new(&c.url, published_at, self.now, Language::Other, &meta.title, &meta.description)
            .map_err(|e| skip(DropReason::InvalidUrl(e.to_string())))?;
        let guess = self
            .languages
            .identify(&article.text)
            .map_err(|_| skip(DropReason::EmptyText))?;
        article.language = guess.language;
        for decision in [
            filter_domain(&article, &self.blocklist),
            filter_recency(&article, self.now, self.window),
            filter_language(&article),
        ] {
            if let FilterDecision::Drop(reason) = decision {
                return Err(skip(reason));
            }
        }
        Ok(article)
    }
}

/// Writes articles as NDJSON.
pub fn write_articles(articles: &[Article], mut w: impl std::io::Write) -> std::io::Result<()> {
    for a in articles {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
