//! Fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use epiwatch_core::config::{Config, ExtractorKind};
use epiwatch_core::fake::MapFetcher;
use epiwatch_core::ingestion::{IngestReport, SourceAdapter};
use epiwatch_core::metrics::adjusted_rand_index;
use epiwatch_core::pipeline::{ClusterReport, IngestSummary, ProcessReport};
use epiwatch_core::store::{Filter, PageRequest, Store, COLLECTIONS};
use epiwatch_core::EventId;
use serde::{Deserialize, Serialize};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn corpus_dir() -> PathBuf {
    fixtures().join("corpus")
}

/// The corpus configuration with its store redirected to `store_dir`.
pub fn corpus_config(store_dir: &Path) -> Config {
    let dir = corpus_dir();
    let raw = fs::read_to_string(dir.join("epiwatch.toml")).expect("corpus config");
    let mut config: Config = toml::from_str(&raw).expect("corpus config parses");
    config = config.rebase(&dir);
    config.store_dir = store_dir.to_path_buf();
    config
}

pub fn corpus_adapter() -> SourceAdapter {
    SourceAdapter::url_list_file("corpus", corpus_dir().join("urls.ndjson"))
}

pub struct CorpusRun {
    pub store: Arc<Store>,
    pub ingest_report: IngestReport,
    pub ingest: IngestSummary,
    pub days: Vec<(NaiveDate, ProcessReport, ClusterReport)>,
}

/// Ingests the fixture corpus and processes and clusters every day.
/// Network access is impossible: the fetcher knows no pages.
pub fn run_corpus(store_dir: &Path) -> CorpusRun {
    let config = corpus_config(store_dir);
    let store = Arc::new(config.open_store().expect("store opens"));
    let pipeline = config
        .build_pipeline(Arc::clone(&store), ExtractorKind::QaNli)
        .expect("pipeline builds");
    let ingestor = config.ingestor(Box::new(MapFetcher::default())).expect("ingestor");
    let adapter = corpus_adapter();
    let ingest_report = ingestor.ingest(&adapter).expect("ingest report");
    let ingest = pipeline.ingest(&ingestor, &adapter).expect("ingest");
    let days = store
        .article_days()
        .into_iter()
        .map(|d| {
            let (p, c) = pipeline.run_day(d, ExtractorKind::QaNli).expect("run day");
            (d, p, c)
        })
        .collect();
    CorpusRun {
        store,
        ingest_report,
        ingest,
        days,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterView {
    pub members: Vec<String>,
    pub representative: String,
}

/// `url | disease | state/district/subdistrict | incident type number`
pub fn describe(store: &Store, id: &EventId) -> String {
    let e = store.mapped_event(id).expect("mapped event");
    let a = store.article(&e.raw.article_id).expect("article");
    let loc: Vec<&str> = e.levels().into_iter().filter(|l| !l.is_empty()).collect();
    let loc = if loc.is_empty() { "-".to_string() } else { loc.join("/") };
    let number = e.raw.number.map_or("-".to_string(), |n| n.to_string());
    format!(
        "{} | {} | {} | {} {} {}",
        a.url,
        e.standard_disease,
        loc,
        e.raw.incident.as_str(),
        e.raw.incident_type.as_str(),
        number
    )
}

pub type Snapshot = BTreeMap<NaiveDate, Vec<ClusterView>>;

pub fn all() -> PageRequest {
    PageRequest {
        page: 1,
        page_size: usize::MAX,
    }
}

/// Current clusters per day, described by their members.
pub fn snapshot(store: &Store) -> Snapshot {
    store
        .days()
        .into_iter()
        .map(|day| {
            let filter = Filter {
                day: Some(day),
                ..Filter::default()
            };
            let mut views: Vec<ClusterView> = store
                .list_clusters(&filter, all())
                .items
                .iter()
                .map(|c| {
                    let mut members: Vec<String> = c.member_ids.iter().map(|id| describe(store, id)).collect();
                    members.sort();
                    ClusterView {
                        members,
                        representative: describe(store, &c.representative_id),
                    }
                })
                .collect();
            views.sort();
            (day, views)
        })
        .collect()
}

pub fn golden_path() -> PathBuf {
    corpus_dir().join("golden_clusters.json")
}

/// Mean per-day ARI of the stored clusters against the corpus story labels.
pub fn story_ari(store: &Store) -> f64 {
    let stories: BTreeMap<String, String> =
        serde_json::from_str(&fs::read_to_string(corpus_dir().join("stories.json")).unwrap()).unwrap();
    let mut scores = Vec::new();
    for day in store.days() {
        let filter = Filter {
            day: Some(day),
            ..Filter::default()
        };
        let mut gold = Vec::new();
        let mut predicted = Vec::new();
        for (k, c) in store.list_clusters(&filter, all()).items.iter().enumerate() {
            for id in &c.member_ids {
                let e = store.mapped_event(id).unwrap();
                let url = store.article(&e.raw.article_id).unwrap().url;
                gold.push(stories.get(&url).cloned().unwrap_or_else(|| format!("unlabeled:{url}")));
                predicted.push(k);
            }
        }
        if gold.len() >= 2 {
            scores.push(adjusted_rand_index(&gold, &predicted).unwrap());
        }
    }
    scores.iter().sum::<f64>() / scores.len().max(1) as f64
}

/// Every collection file of a store directory, by name.
pub fn store_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    COLLECTIONS
        .iter()
        .map(|c| {
            let path = dir.join(format!("{c}.ndjson"));
            (c.to_string(), fs::read(path).unwrap_or_default())
        })
        .collect()
}
