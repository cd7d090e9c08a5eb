//! Stage orchestration over the store: ingest, process a day, cluster a day.

use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_day, ClusterItem, EmbeddingProvider, ThresholdRules};
use crate::config::ExtractorKind;
use crate::extract::llm::LlmExtractor;
use crate::extract::qa_nli::{extract_events_qa_nli, QaNliExtractor};
use crate::ingestion::{IngestError, Ingestor, SourceAdapter};
use crate::mapping::{MapOutcome, Mapper};
use crate::model::{Article, EventId, RawEvent};
use crate::provider::{ProviderError, RetryPolicy};
use crate::relevance::{classify_relevance, ClassifierProvider, EntityGate, Label};
use crate::store::{PageRequest, QuarantineRecord, Store, StoreError, UNGROUNDED};
use crate::translation::{translate, TranslationProvider};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("provider failure: {0}")]
    Provider(#[from] ProviderError),
    #[error("extractor {0:?} is not configured")]
    ExtractorMissing(ExtractorKind),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub stored: usize,
    pub unchanged: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub articles: usize,
    pub irrelevant: usize,
    pub quarantined: usize,
    pub gated_out: usize,
    pub extracted: usize,
    pub mapped: usize,
    pub dropped: usize,
    pub ungrounded: usize,
    pub parse_failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub events: usize,
    pub clusters: usize,
    /// False when the day's clusters were already stored as computed.
    pub changed: bool,
}

/// What processing one article produced, before anything is written.
#[derive(Default)]
struct ArticleResult {
    article: Option<Article>,
    quarantine: Option<(String, String)>,
    irrelevant: bool,
    gated_out: bool,
    events: Vec<RawEvent>,
    ungrounded: Vec<EventId>,
    mapped: Vec<MapOutcome>,
    parse_failed: bool,
}

pub struct Pipeline {
    pub store: Arc<Store>,
    pub classifier: Box<dyn ClassifierProvider>,
    pub relevance_threshold: f64,
    pub translator: Box<dyn TranslationProvider>,
    pub gate: EntityGate,
    pub qa_nli: Option<QaNliExtractor>,
    pub llm: Option<LlmExtractor>,
    pub mapper: Mapper,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub rules: ThresholdRules,
    pub clock: Box<dyn Clock>,
    pub retry: RetryPolicy,
}

impl Pipeline {
    /// Runs one adapter through the ingestion filters and stores what survives.
    pub fn ingest(&self, ingestor: &Ingestor, adapter: &SourceAdapter) -> Result<IngestSummary, PipelineError> {
        let report = ingestor.ingest(adapter)?;
        let mut s = IngestSummary {
            skipped: report.skipped.len(),
            ..IngestSummary::default()
        };
        for a in &report.articles {
            match self.store.article(&a.id) {
                // keep a translation from an earlier run
                Ok(prev) if Article { translated_text: None, ..prev.clone() } == *a => s.unchanged += 1,
                _ => {
                    self.store.put_article(a)?;
                    s.stored += 1;
                }
            }
        }
        Ok(s)
    }

    fn process_article(&self, article: &Article, kind: ExtractorKind) -> ArticleResult {
        let mut r = ArticleResult::default();
        let quarantine = |stage: &str, reason: String| ArticleResult {
            quarantine: Some((stage.to_string(), reason)),
            ..ArticleResult::default()
        };
        match classify_relevance(article, self.classifier.as_ref(), self.relevance_threshold) {
            Ok(rel) if rel.label == Label::Irrelevant => {
                r.irrelevant = true;
                return r;
            }
            Ok(_) => {}
            Err(e) => return quarantine("relevance", e.to_string()),
        }
        let translated = match translate(article, self.translator.as_ref(), &self.retry) {
            Ok(t) => t,
            Err(e) => return quarantine("translation", e.to_string()),
        };
        let gate = self.gate.check(&translated);
        if !gate.keep {
            r.gated_out = true;
            r.article = Some(translated);
            return r;
        }
        match kind {
            ExtractorKind::QaNli => {
                let ex = self.qa_nli.as_ref().expect("checked by caller");
                r.events = extract_events_qa_nli(&translated, &gate, ex);
            }
            ExtractorKind::Llm => {
                let ex = self.llm.as_ref().expect("checked by caller");
                match ex.extract(&translated) {
                    Ok(out) => {
                        r.parse_failed = out.parse_failed;
                        r.ungrounded = out.ungrounded;
                        r.events = out.events;
                    }
                    Err(e) => return quarantine("extraction", e.to_string()),
                }
            }
        }
        r.mapped = r.events.iter().map(|e| self.mapper.map(e, Some(&translated))).collect();
        r.article = Some(translated);
        r
    }

    /// Classifies, translates, gates, extracts and maps every stored article of
    /// `day`. Re-running with the same providers leaves the store unchanged.
    pub fn process(&self, day: NaiveDate, kind: ExtractorKind) -> Result<ProcessReport, PipelineError> {
        let ready = match kind {
            ExtractorKind::QaNli => self.qa_nli.is_some(),
            ExtractorKind::Llm => self.llm.is_some(),
        };
        if !ready {
            return Err(PipelineError::ExtractorMissing(kind));
        }
        let articles = self.store.list_articles(Some(day), PageRequest { page: 1, page_size: usize::MAX }).items;
        let results: Vec<ArticleResult> = articles.par_iter().map(|a| self.process_article(a, kind)).collect();

        // writes happen in article-id order so stores are identical across runs
        let mut report = ProcessReport {
            articles: articles.len(),
            ..ProcessReport::default()
        };
        let now = self.clock.now();
        for (article, r) in articles.iter().zip(results) {
            if let Some((stage, reason)) = r.quarantine {
                report.quarantined += 1;
                self.store.quarantine(&QuarantineRecord {
                    article_id: article.id.clone(),
                    stage,
                    reason,
                    at: now,
                })?;
                continue;
            }
            report.irrelevant += r.irrelevant as usize;
            report.gated_out += r.gated_out as usize;
            report.parse_failures += r.parse_failed as usize;
            if let Some(a) = &r.article {
                self.store.put_article(a)?;
            }
            for e in &r.events {
                self.store.put_raw_event(e)?;
                report.extracted += 1;
            }
            for id in &r.ungrounded {
                self.store.flag_event(id, UNGROUNDED)?;
                report.ungrounded += 1;
            }
            for m in r.mapped {
                match m {
                    MapOutcome::Mapped { event, .. } => {
                        self.store.put_mapped_event(&event)?;
                        report.mapped += 1;
                    }
                    MapOutcome::Dropped(d) => {
                        tracing::debug!(event = %d.event_id, reason = %d.reason, "event dropped at mapping");
                        report.dropped += 1;
                    }
                }
            }
        }
        Ok(report)
    }

    /// Clusters the day's domestic mapped events and replaces the day's clusters.
    pub fn cluster(&self, day: NaiveDate) -> Result<ClusterReport, PipelineError> {
        cluster_stored_day(&self.store, day, self.embedder.as_ref(), &self.rules)
    }

    pub fn run_day(&self, day: NaiveDate, kind: ExtractorKind) -> Result<(ProcessReport, ClusterReport), PipelineError> {
        let p = self.process(day, kind)?;
        let c = self.cluster(day)?;
        Ok((p, c))
    }
}

/// Clustering needs only the store, the embedder and the rules; the API
/// service calls this directly.
pub fn cluster_stored_day(
    store: &Store,
    day: NaiveDate,
    embedder: &dyn EmbeddingProvider,
    rules: &ThresholdRules,
) -> Result<ClusterReport, PipelineError> {
    let items: Vec<ClusterItem> = store
        .mapped_events_for_day(day)
        .into_iter()
        .filter(|e| !e.international)
        .map(|event| {
            let text = store
                .article(&event.raw.article_id)
                .map(|a| a.english_text().to_string())?;
            Ok(ClusterItem { event, text })
        })
        .collect::<Result<_, StoreError>>()?;
    let clusters = cluster_day(day, &items, embedder, rules)?;
    let changed = store.replace_day(day, &clusters)?;
    Ok(ClusterReport {
        events: items.len(),
        clusters: clusters.len(),
        changed,
    })
}
