//! Persistence: append-only NDJSON logs per collection, replayed into an
//! in-memory index on open.
//!
//! On-disk layout (version 1):
//!
//! ```text
//! <dir>/VERSION                 "1"
//! <dir>/articles.ndjson         {"op":"article", ...}
//! <dir>/raw_events.ndjson       {"op":"raw_event", ...}
//! <dir>/mapped_events.ndjson    {"op":"mapped_event", ...}
//! <dir>/clusters.ndjson         {"op":"replace_day","day":..,"clusters":[..]}
//! <dir>/reviews.ndjson          {"op":"review", ...}
//! <dir>/source_flags.ndjson     {"op":"source_flag", ...}
//! <dir>/event_flags.ndjson      {"op":"event_flag", ...}
//! <dir>/quarantine.ndjson       {"op":"quarantine", ...}
//! ```
//!
//! Each line is one complete record and is written with a single append. A
//! trailing line without a newline is a torn write and is discarded on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::ingestion::Blocklist;
use crate::model::{Article, ArticleId, Cluster, ClusterId, Decision, EventId, MappedEvent, RawEvent, ReviewDecision};

pub const LAYOUT_VERSION: u32 = 1;
pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 200;

pub const COLLECTIONS: [&str; 8] = [
    "articles",
    "raw_events",
    "mapped_events",
    "clusters",
    "reviews",
    "source_flags",
    "event_flags",
    "quarantine",
];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{collection} {id} not found")]
    NotFound { collection: &'static str, id: String },
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("cluster {cluster_id} already decided as {existing:?}")]
    AlreadyDecided { cluster_id: String, existing: Decision },
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("invalid domain {0:?}")]
    InvalidDomain(String),
    #[error("store layout version {found} is not supported (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("corrupt {collection} log at line {line}: {msg}")]
    Corrupt { collection: String, line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Raw line storage for the collection logs.
pub trait Backend: Send + Sync {
    fn load(&self, collection: &str) -> Result<Vec<String>, StoreError>;
    fn append(&self, collection: &str, line: &str) -> Result<(), StoreError>;
}

pub struct FileBackend {
    dir: PathBuf,
}

impl FileBackend {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let version = dir.join("VERSION");
        if version.exists() {
            let found = fs::read_to_string(&version)?.trim().to_string();
            if found != LAYOUT_VERSION.to_string() {
                return Err(StoreError::Version {
                    found,
                    expected: LAYOUT_VERSION,
                });
            }
        } else {
            fs::write(&version, format!("{LAYOUT_VERSION}\n"))?;
        }
        Ok(Self { dir })
    }

    fn path(&self, collection: &str) -> PathBuf {
        self.dir.join(format!("{collection}.ndjson"))
    }
}

impl Backend for FileBackend {
    fn load(&self, collection: &str) -> Result<Vec<String>, StoreError> {
        let path = self.path(collection);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let bytes = fs::read(&path)?;
        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < bytes.len() {
            tracing::warn!(collection, "discarding torn trailing record");
            OpenOptions::new().write(true).open(&path)?.set_len(complete as u64)?;
        }
        bytes[..complete]
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| l.map_err(StoreError::from))
            .collect()
    }

    fn append(&self, collection: &str, line: &str) -> Result<(), StoreError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(collection))?;
        let mut buf = line.as_bytes().to_vec();
        buf.push(b'\n');
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }
}

/// Process-local backend; clones share the same lines, so a second `Store`
/// opened on a clone sees what the first wrote.
#[derive(Clone, Default)]
pub struct MemoryBackend {
    lines: Arc<Mutex<HashMap<String, Vec<String>>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Backend for MemoryBackend {
    fn load(&self, collection: &str) -> Result<Vec<String>, StoreError> {
        Ok(self.lines.lock().unwrap().get(collection).cloned().unwrap_or_default())
    }

    fn append(&self, collection: &str, line: &str) -> Result<(), StoreError> {
        self.lines
            .lock()
            .unwrap()
            .entry(collection.to_string())
            .or_default()
            .push(line.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFlag {
    pub domain: String,
    pub reasons: Vec<String>,
    pub flagged_by: Vec<String>,
    pub flagged_at: DateTime<Utc>,
    pub confirmed: bool,
    #[serde(default)]
    pub confirmed_by: Option<String>,
    #[serde(default)]
    pub confirmed_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFlag {
    pub event_id: EventId,
    pub flag: String,
}

pub const UNGROUNDED: &str = "ungrounded";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub article_id: ArticleId,
    pub stage: String,
    pub reason: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    #[serde(flatten)]
    pub review: ReviewDecision,
    /// The cluster was replaced by a later re-clustering of its day.
    pub stale: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Entry {
    Article(Article),
    RawEvent(RawEvent),
    MappedEvent(MappedEvent),
    ReplaceDay { day: NaiveDate, clusters: Vec<Cluster> },
    Review(ReviewDecision),
    SourceFlag(SourceFlag),
    EventFlag(EventFlag),
    Quarantine(QuarantineRecord),
}

impl Entry {
    fn collection(&self) -> &'static str {
        match self {
            Entry::Article(_) => "articles",
            Entry::RawEvent(_) => "raw_events",
            Entry::MappedEvent(_) => "mapped_events",
            Entry::ReplaceDay { .. } => "clusters",
            Entry::Review(_) => "reviews",
            Entry::SourceFlag(_) => "source_flags",
            Entry::EventFlag(_) => "event_flags",
            Entry::Quarantine(_) => "quarantine",
        }
    }
}

#[derive(Default)]
struct Index {
    articles: BTreeMap<ArticleId, Article>,
    raw_events: BTreeMap<EventId, RawEvent>,
    mapped_events: BTreeMap<EventId, MappedEvent>,
    /// Every cluster ever stored, including replaced ones kept for audit.
    clusters: BTreeMap<ClusterId, Cluster>,
    days: BTreeMap<NaiveDate, BTreeSet<ClusterId>>,
    reviews: BTreeMap<ClusterId, Vec<ReviewDecision>>,
    source_flags: BTreeMap<String, SourceFlag>,
    event_flags: BTreeSet<(EventId, String)>,
    quarantine: Vec<QuarantineRecord>,
    revision: u64,
}

impl Index {
    fn apply(&mut self, e: Entry) {
        self.revision += 1;
        match e {
            Entry::Article(a) => {
                self.articles.insert(a.id.clone(), a);
            }
            Entry::RawEvent(r) => {
                self.raw_events.insert(r.id(), r);
            }
            Entry::MappedEvent(m) => {
                self.mapped_events.insert(m.id(), m);
            }
            Entry::ReplaceDay { day, clusters } => {
                let ids = clusters.iter().map(|c| c.id.clone()).collect();
                for c in clusters {
                    self.clusters.insert(c.id.clone(), c);
                }
                self.days.insert(day, ids);
            }
            Entry::Review(r) => self.reviews.entry(r.cluster_id.clone()).or_default().push(r),
            Entry::SourceFlag(f) => {
                self.source_flags.insert(f.domain.clone(), f);
            }
            Entry::EventFlag(f) => {
                self.event_flags.insert((f.event_id, f.flag));
            }
            Entry::Quarantine(q) => self.quarantine.push(q),
        }
    }

    fn is_current(&self, id: &ClusterId) -> bool {
        self.clusters
            .get(id)
            .is_some_and(|c| self.days.get(&c.day).is_some_and(|s| s.contains(id)))
    }

    fn decision(&self, id: &ClusterId) -> Decision {
        self.reviews
            .get(id)
            .and_then(|r| r.last())
            .map_or(Decision::Pending, |r| r.decision)
    }

    fn cluster_matches(&self, c: &Cluster, disease: Option<&str>, state: Option<&str>) -> bool {
        let Some(rep) = self.mapped_events.get(&c.representative_id) else {
            return disease.is_none() && state.is_none();
        };
        disease.is_none_or(|d| rep.standard_disease.eq_ignore_ascii_case(d))
            && state.is_none_or(|s| rep.state.eq_ignore_ascii_case(s))
    }

    fn event_day(&self, e: &RawEvent) -> Option<NaiveDate> {
        self.articles.get(&e.article_id).map(Article::event_day)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

/// 1-based page request; sizes are clamped to `1..=MAX_PAGE_SIZE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRequest {
    pub page: usize,
    pub page_size: usize,
}

impl Default for PageRequest {
    fn default() -> Self {
        Self {
            page: 1,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

impl PageRequest {
    pub fn new(page: usize, page_size: usize) -> Self {
        Self {
            page: page.max(1),
            page_size: page_size.clamp(1, MAX_PAGE_SIZE),
        }
    }

    fn slice<T: Clone>(self, all: Vec<T>) -> Page<T> {
        let total = all.len();
        let start = (self.page - 1).saturating_mul(self.page_size).min(total);
        let end = (start + self.page_size).min(total);
        Page {
            items: all[start..end].to_vec(),
            page: self.page,
            page_size: self.page_size,
            total,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub day: Option<NaiveDate>,
    pub disease: Option<String>,
    pub state: Option<String>,
}

/// Headline counts over an inclusive day range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub articles_processed: usize,
    pub events_extracted: usize,
    pub unique_clusters: usize,
    pub shortlisted: usize,
}

pub struct Store {
    backend: Box<dyn Backend>,
    index: RwLock<Index>,
    // serializes validate-then-append so checks and writes are one unit
    write: Mutex<()>,
}

impl Store {
    pub fn open(backend: impl Backend + 'static) -> Result<Self, StoreError> {
        let mut index = Index::default();
        for collection in COLLECTIONS {
            for (n, line) in backend.load(collection)?.iter().enumerate() {
                let entry: Entry = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                    collection: collection.to_string(),
                    line: n + 1,
                    msg: e.to_string(),
                })?;
                index.apply(entry);
            }
        }
        Ok(Self {
            backend: Box::new(backend),
            index: RwLock::new(index),
            write: Mutex::new(()),
        })
    }

    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open(FileBackend::open(dir.as_ref())?)
    }

    pub fn in_memory() -> Self {
        Self::open(MemoryBackend::new()).expect("empty memory store opens")
    }

    /// Increases with every applied record.
    pub fn revision(&self) -> u64 {
        self.index.read().unwrap().revision
    }

    fn commit(&self, entry: Entry) -> Result<(), StoreError> {
        let line = serde_json::to_string(&entry).expect("records serialize");
        self.backend.append(entry.collection(), &line)?;
        self.index.write().unwrap().apply(entry);
        Ok(())
    }

    pub fn put_article(&self, article: &Article) -> Result<bool, StoreError> {
        let _w = self.write.lock().unwrap();
        if self.index.read().unwrap().articles.get(&article.id) == Some(article) {
            return Ok(false);
        }
        self.commit(Entry::Article(article.clone()))?;
        Ok(true)
    }

    pub fn put_raw_event(&self, event: &RawEvent) -> Result<bool, StoreError> {
        let _w = self.write.lock().unwrap();
        {
            let idx = self.index.read().unwrap();
            if !idx.articles.contains_key(&event.article_id) {
                return Err(StoreError::IntegrityViolation(format!(
                    "raw event references missing article {}",
                    event.article_id
                )));
            }
            if idx.raw_events.get(&event.id()) == Some(event) {
                return Ok(false);
            }
        }
        self.commit(Entry::RawEvent(event.clone()))?;
        Ok(true)
    }

    pub fn put_mapped_event(&self, event: &MappedEvent) -> Result<bool, StoreError> {
        let _w = self.write.lock().unwrap();
        {
            let idx = self.index.read().unwrap();
            if !idx.raw_events.contains_key(&event.id()) {
                return Err(StoreError::IntegrityViolation(format!(
                    "mapped event references missing raw event {}",
                    event.id()
                )));
            }
            if !event.is_hierarchy_consistent() {
                return Err(StoreError::IntegrityViolation(format!(
                    "mapped event {} has an inconsistent location hierarchy",
                    event.id()
                )));
            }
            if idx.mapped_events.get(&event.id()) == Some(event) {
                return Ok(false);
            }
        }
        self.commit(Entry::MappedEvent(event.clone()))?;
        Ok(true)
    }

    /// Atomically replaces the clusters of `day`. Clusters no longer present are
    /// kept for audit and their reviews become stale.
    pub fn replace_day(&self, day: NaiveDate, clusters: &[Cluster]) -> Result<bool, StoreError> {
        let _w = self.write.lock().unwrap();
        {
            let idx = self.index.read().unwrap();
            let mut seen = BTreeSet::new();
            for c in clusters {
                if c.day != day {
                    return Err(StoreError::IntegrityViolation(format!("cluster {} is for {} not {day}", c.id, c.day)));
                }
                if c.member_ids.is_empty() || !c.member_ids.contains(&c.representative_id) {
                    return Err(StoreError::IntegrityViolation(format!("cluster {} has no valid representative", c.id)));
                }
                for m in &c.member_ids {
                    if !idx.mapped_events.contains_key(m) {
                        return Err(StoreError::IntegrityViolation(format!(
                            "cluster {} references missing event {m}",
                            c.id
                        )));
                    }
                    if !seen.insert(m.clone()) {
                        return Err(StoreError::IntegrityViolation(format!("event {m} is in two clusters")));
                    }
                }
            }
            let new_ids: BTreeSet<ClusterId> = clusters.iter().map(|c| c.id.clone()).collect();
            if idx.days.get(&day) == Some(&new_ids) {
                return Ok(false);
            }
        }
        self.commit(Entry::ReplaceDay {
            day,
            clusters: clusters.to_vec(),
        })?;
        Ok(true)
    }

    /// Records a decision on a current pending cluster.
    pub fn review(&self, review: &ReviewDecision) -> Result<ReviewDecision, StoreError> {
        let _w = self.write.lock().unwrap();
        {
            let idx = self.index.read().unwrap();
            if !idx.is_current(&review.cluster_id) {
                return Err(StoreError::NotFound {
                    collection: "clusters",
                    id: review.cluster_id.to_string(),
                });
            }
            if review.decision == Decision::Pending {
                return Err(StoreError::InvalidDecision("a review must shortlist or reject".into()));
            }
            let existing = idx.decision(&review.cluster_id);
            if !existing.can_transition_to(review.decision) {
                return Err(StoreError::AlreadyDecided {
                    cluster_id: review.cluster_id.to_string(),
                    existing,
                });
            }
        }
        self.commit(Entry::Review(review.clone()))?;
        Ok(review.clone())
    }

    /// Flags a domain as unreliable; repeated flags append their reasons.
    pub fn flag_source(&self, domain: &str, reason: &str, reviewer: &str, at: DateTime<Utc>) -> Result<SourceFlag, StoreError> {
        let domain = normalize_domain(domain)?;
        let _w = self.write.lock().unwrap();
        let flag = match self.index.read().unwrap().source_flags.get(&domain) {
            Some(f) => {
                let mut f = f.clone();
                f.reasons.push(reason.to_string());
                if !f.flagged_by.iter().any(|r| r == reviewer) {
                    f.flagged_by.push(reviewer.to_string());
                }
                f
            }
            None => SourceFlag {
                domain: domain.clone(),
                reasons: vec![reason.to_string()],
                flagged_by: vec![reviewer.to_string()],
                flagged_at: at,
                confirmed: false,
                confirmed_by: None,
                confirmed_at: None,
            },
        };
        self.commit(Entry::SourceFlag(flag.clone()))?;
        Ok(flag)
    }

    /// Second step of the flag flow; only confirmed domains are exported.
    pub fn confirm_source(&self, domain: &str, reviewer: &str, at: DateTime<Utc>) -> Result<SourceFlag, StoreError> {
        let domain = normalize_domain(domain)?;
        let _w = self.write.lock().unwrap();
        let mut flag = self
            .index
            .read()
            .unwrap()
            .source_flags
            .get(&domain)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                collection: "source_flags",
                id: domain.clone(),
            })?;
        if flag.confirmed {
            return Ok(flag);
        }
        flag.confirmed = true;
        flag.confirmed_by = Some(reviewer.to_string());
        flag.confirmed_at = Some(at);
        self.commit(Entry::SourceFlag(flag.clone()))?;
        Ok(flag)
    }

    pub fn source_flags(&self) -> Vec<SourceFlag> {
        self.index.read().unwrap().source_flags.values().cloned().collect()
    }

    /// Confirmed flags merged into `base`, stamped with the latest confirmation.
    pub fn export_blocklist(&self, base: Option<&Blocklist>) -> Blocklist {
        let idx = self.index.read().unwrap();
        let confirmed: Vec<&SourceFlag> = idx.source_flags.values().filter(|f| f.confirmed).collect();
        let mut domains: BTreeSet<String> = base.map(|b| b.domains.clone()).unwrap_or_default();
        domains.extend(confirmed.iter().map(|f| f.domain.clone()));
        let updated = confirmed
            .iter()
            .filter_map(|f| f.confirmed_at)
            .chain(base.map(|b| b.updated_at))
            .max()
            .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
        Blocklist::new(domains, updated).expect("stored domains were validated")
    }

    pub fn flag_event(&self, event_id: &EventId, flag: &str) -> Result<bool, StoreError> {
        let _w = self.write.lock().unwrap();
        {
            let idx = self.index.read().unwrap();
            if !idx.raw_events.contains_key(event_id) {
                return Err(StoreError::NotFound {
                    collection: "raw_events",
                    id: event_id.to_string(),
                });
            }
            if idx.event_flags.contains(&(event_id.clone(), flag.to_string())) {
                return Ok(false);
            }
        }
        self.commit(Entry::EventFlag(EventFlag {
            event_id: event_id.clone(),
            flag: flag.to_string(),
        }))?;
        Ok(true)
    }

    pub fn event_flags(&self, event_id: &EventId) -> Vec<String> {
        self.index
            .read()
            .unwrap()
            .event_flags
            .iter()
            .filter(|(id, _)| id == event_id)
            .map(|(_, f)| f.clone())
            .collect()
    }

    pub fn quarantine(&self, record: &QuarantineRecord) -> Result<(), StoreError> {
        let _w = self.write.lock().unwrap();
        if self.index.read().unwrap().quarantine.contains(record) {
            return Ok(());
        }
        self.commit(Entry::Quarantine(record.clone()))
    }

    pub fn quarantined(&self) -> Vec<QuarantineRecord> {
        self.index.read().unwrap().quarantine.clone()
    }

    pub fn article(&self, id: &ArticleId) -> Result<Article, StoreError> {
        self.index
            .read()
            .unwrap()
            .articles
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                collection: "articles",
                id: id.to_string(),
            })
    }

    pub fn raw_event(&self, id: &EventId) -> Result<RawEvent, StoreError> {
        self.index
            .read()
            .unwrap()
            .raw_events
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                collection: "raw_events",
                id: id.to_string(),
            })
    }

    pub fn mapped_event(&self, id: &EventId) -> Result<MappedEvent, StoreError> {
        self.index
            .read()
            .unwrap()
            .mapped_events
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                collection: "mapped_events",
                id: id.to_string(),
            })
    }

    /// A cluster by id, including replaced ones.
    pub fn cluster(&self, id: &ClusterId) -> Result<Cluster, StoreError> {
        self.index
            .read()
            .unwrap()
            .clusters
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound {
                collection: "clusters",
                id: id.to_string(),
            })
    }

    pub fn is_current(&self, id: &ClusterId) -> bool {
        self.index.read().unwrap().is_current(id)
    }

    pub fn decision(&self, id: &ClusterId) -> Decision {
        self.index.read().unwrap().decision(id)
    }

    pub fn reviews(&self, id: &ClusterId) -> Vec<ReviewRecord> {
        let idx = self.index.read().unwrap();
        let stale = !idx.is_current(id);
        idx.reviews
            .get(id)
            .map(|rs| {
                rs.iter()
                    .map(|r| ReviewRecord {
                        review: r.clone(),
                        stale,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn list_articles(&self, day: Option<NaiveDate>, page: PageRequest) -> Page<Article> {
        let idx = self.index.read().unwrap();
        let all = idx
            .articles
            .values()
            .filter(|a| day.is_none_or(|d| a.event_day() == d))
            .cloned()
            .collect();
        page.slice(all)
    }

    pub fn list_raw_events(&self, day: Option<NaiveDate>, page: PageRequest) -> Page<RawEvent> {
        let idx = self.index.read().unwrap();
        let all = idx
            .raw_events
            .values()
            .filter(|e| day.is_none_or(|d| idx.event_day(e) == Some(d)))
            .cloned()
            .collect();
        page.slice(all)
    }

    pub fn list_mapped_events(&self, filter: &Filter, page: PageRequest) -> Page<MappedEvent> {
        let idx = self.index.read().unwrap();
        let all = idx
            .mapped_events
            .values()
            .filter(|e| filter.day.is_none_or(|d| idx.event_day(&e.raw) == Some(d)))
            .filter(|e| filter.disease.as_deref().is_none_or(|x| e.standard_disease.eq_ignore_ascii_case(x)))
            .filter(|e| filter.state.as_deref().is_none_or(|x| e.state.eq_ignore_ascii_case(x)))
            .cloned()
            .collect();
        page.slice(all)
    }

    /// Current clusters, ordered by day then id; disease and state filters
    /// apply to the representative event.
    pub fn list_clusters(&self, filter: &Filter, page: PageRequest) -> Page<Cluster> {
        let idx = self.index.read().unwrap();
        let all = idx
            .days
            .iter()
            .filter(|(d, _)| filter.day.is_none_or(|x| x == **d))
            .flat_map(|(_, ids)| ids.iter())
            .filter_map(|id| idx.clusters.get(id))
            .filter(|c| idx.cluster_matches(c, filter.disease.as_deref(), filter.state.as_deref()))
            .cloned()
            .collect();
        page.slice(all)
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        self.index.read().unwrap().days.keys().copied().collect()
    }

    /// Days that have at least one stored article.
    pub fn article_days(&self) -> Vec<NaiveDate> {
        let idx = self.index.read().unwrap();
        let days: BTreeSet<NaiveDate> = idx.articles.values().map(Article::event_day).collect();
        days.into_iter().collect()
    }

    /// Mapped events whose article falls on `day`, ordered by id.
    pub fn mapped_events_for_day(&self, day: NaiveDate) -> Vec<MappedEvent> {
        self.list_mapped_events(
            &Filter {
                day: Some(day),
                ..Filter::default()
            },
            PageRequest {
                page: 1,
                page_size: usize::MAX,
            },
        )
        .items
    }

    pub fn stats(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> Stats {
        let idx = self.index.read().unwrap();
        let in_range = |d: NaiveDate| from.is_none_or(|f| d >= f) && to.is_none_or(|t| d <= t);
        let current: Vec<&ClusterId> = idx
            .days
            .iter()
            .filter(|(d, _)| in_range(**d))
            .flat_map(|(_, ids)| ids.iter())
            .collect();
        Stats {
            articles_processed: idx.articles.values().filter(|a| in_range(a.event_day())).count(),
            events_extracted: idx
                .raw_events
                .values()
                .filter(|e| idx.event_day(e).is_some_and(in_range))
                .count(),
            unique_clusters: current.len(),
            shortlisted: current
                .iter()
                .filter(|id| idx.decision(id) == Decision::Shortlisted)
                .count(),
        }
    }

    /// Writes the current records of one collection as NDJSON.
    pub fn export(&self, collection: &str, mut w: impl Write) -> Result<usize, StoreError> {
        let idx = self.index.read().unwrap();
        let lines: Vec<String> = match collection {
            "articles" => idx.articles.values().map(to_line).collect(),
            "raw_events" => idx.raw_events.values().map(to_line).collect(),
            "mapped_events" => idx.mapped_events.values().map(to_line).collect(),
            "clusters" => idx
                .days
                .values()
                .flatten()
                .filter_map(|id| idx.clusters.get(id))
                .map(to_line)
                .collect(),
            "reviews" => idx
                .reviews
                .iter()
                .flat_map(|(id, rs)| {
                    let stale = !idx.is_current(id);
                    rs.iter().map(move |r| {
                        to_line(&ReviewRecord {
                            review: r.clone(),
                            stale,
                        })
                    })
                })
                .collect(),
            "source_flags" => idx.source_flags.values().map(to_line).collect(),
            "event_flags" => idx
                .event_flags
                .iter()
                .map(|(e, f)| {
                    to_line(&EventFlag {
                        event_id: e.clone(),
                        flag: f.clone(),
                    })
                })
                .collect(),
            "quarantine" => idx.quarantine.iter().map(to_line).collect(),
            other => {
                return Err(StoreError::NotFound {
                    collection: "collections",
                    id: other.to_string(),
                })
            }
        };
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(lines.len())
    }

    /// Loads exported NDJSON into the store through the normal checked puts.
    /// Clusters are grouped by day and each day is replaced as a unit.
    pub fn import(&self, collection: &str, r: impl BufRead) -> Result<usize, StoreError> {
        let mut n = 0;
        let mut days: BTreeMap<NaiveDate, Vec<Cluster>> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |e: serde_json::Error| StoreError::Corrupt {
                collection: collection.to_string(),
                line: i + 1,
                msg: e.to_string(),
            };
            match collection {
                "articles" => {
                    self.put_article(&serde_json::from_str(&line).map_err(corrupt)?)?;
                }
                "raw_events" => {
                    self.put_raw_event(&serde_json::from_str(&line).map_err(corrupt)?)?;
                }
                "mapped_events" => {
                    self.put_mapped_event(&serde_json::from_str(&line).map_err(corrupt)?)?;
                }
                "clusters" => {
                    let c: Cluster = serde_json::from_str(&line).map_err(corrupt)?;
                    days.entry(c.day).or_default().push(c);
                }
                "reviews" => {
                    let r: ReviewRecord = serde_json::from_str(&line).map_err(corrupt)?;
                    self.review(&r.review)?;
                }
                "source_flags" => {
                    let f: SourceFlag = serde_json::from_str(&line).map_err(corrupt)?;
                    let _w = self.write.lock().unwrap();
                    normalize_domain(&f.domain)?;
                    self.commit(Entry::SourceFlag(f))?;
                }
                "event_flags" => {
                    let f: EventFlag = serde_json::from_str(&line).map_err(corrupt)?;
                    self.flag_event(&f.event_id, &f.flag)?;
                }
                "quarantine" => self.quarantine(&serde_json::from_str(&line).map_err(corrupt)?)?,
                other => {
                    return Err(StoreError::NotFound {
                        collection: "collections",
                        id: other.to_string(),
                    })
                }
            }
            n += 1;
        }
        for (day, clusters) in days {
            self.replace_day(day, &clusters)?;
        }
        Ok(n)
    }

    /// Full scan for dangling references; returns every violation found.
    pub fn check_integrity(&self) -> Vec<String> {
        let idx = self.index.read().unwrap();
        let mut out = Vec::new();
        for (id, e) in &idx.raw_events {
            if !idx.articles.contains_key(&e.article_id) {
                out.push(format!("raw event {id} -> missing article {}", e.article_id));
            }
        }
        for (id, e) in &idx.mapped_events {
            if !idx.raw_events.contains_key(id) {
                out.push(format!("mapped event {id} -> missing raw event"));
            }
            if !e.is_hierarchy_consistent() {
                out.push(format!("mapped event {id} has an inconsistent hierarchy"));
            }
        }
        for (id, c) in &idx.clusters {
            for m in &c.member_ids {
                if !idx.mapped_events.contains_key(m) {
                    out.push(format!("cluster {id} -> missing event {m}"));
                }
            }
            if !c.member_ids.contains(&c.representative_id) {
                out.push(format!("cluster {id} representative is not a member"));
            }
        }
        for (day, ids) in &idx.days {
            let mut seen = BTreeSet::new();
            for id in ids {
                match idx.clusters.get(id) {
                    None => out.push(format!("day {day} -> missing cluster {id}")),
                    Some(c) => {
                        for m in &c.member_ids {
                            if !seen.insert(m) {
                                out.push(format!("day {day}: event {m} in two clusters"));
                            }
                        }
                    }
                }
            }
        }
        for id in idx.reviews.keys() {
            if !idx.clusters.contains_key(id) {
                out.push(format!("review -> missing cluster {id}"));
            }
        }
        out
    }
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("records serialize")
}

fn normalize_domain(domain: &str) -> Result<String, StoreError> {
    let d = domain.trim().trim_end_matches('.').to_ascii_lowercase();
    if crate::web::is_valid_domain(&d) {
        Ok(d)
    } else {
        Err(StoreError::InvalidDomain(domain.to_string()))
    }
}
