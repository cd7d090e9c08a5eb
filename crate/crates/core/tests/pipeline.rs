mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use epiwatch_core::ingestion::DropReason;
use epiwatch_core::Language;

fn bless() -> bool {
    std::env::var_os("EPIWATCH_BLESS").is_some()
}

#[test]
fn corpus_matches_golden_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_corpus(dir.path());
    let snap = snapshot(&run.store);
    if bless() {
        fs::write(golden_path(), serde_json::to_string_pretty(&snap).unwrap() + "\n").unwrap();
    }
    let golden: Snapshot = serde_json::from_str(&fs::read_to_string(golden_path()).unwrap()).unwrap();
    assert_eq!(snap, golden);
}

#[test]
fn corpus_ingest_mix() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_corpus(dir.path());
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &run.ingest_report.skipped {
        let key = match &s.reason {
            DropReason::Blocklisted(_) => "blocklisted",
            DropReason::Stale => "stale",
            DropReason::Duplicate => "duplicate",
            DropReason::FetchFailed(_) => "fetch_failed",
            DropReason::UnsupportedLanguage(_) => "unsupported_language",
            _ => "other",
        };
        *reasons.entry(key).or_default() += 1;
    }
    let expected: BTreeMap<&str, usize> = [
        ("blocklisted", 1),
        ("duplicate", 2),
        ("fetch_failed", 1),
        ("stale", 1),
        ("unsupported_language", 1),
    ]
    .into_iter()
    .collect();
    assert_eq!(reasons, expected);
    assert_eq!(run.ingest.stored, 44);
    assert_eq!(run.ingest.skipped, 6);

    let langs: BTreeMap<Language, usize> = run.ingest_report.articles.iter().fold(BTreeMap::new(), |mut m, a| {
        *m.entry(a.language).or_default() += 1;
        m
    });
    assert_eq!(langs.get(&Language::En), Some(&38));
    assert_eq!(langs.get(&Language::Hi), Some(&5));
    assert_eq!(langs.get(&Language::Te), Some(&1));

    let [(_, p1, c1), (_, p2, c2)] = &run.days[..] else {
        panic!("expected two days, got {}", run.days.len());
    };
    assert_eq!((p1.articles, p1.irrelevant, p1.quarantined, p1.gated_out), (24, 2, 1, 4));
    assert_eq!((c1.events, c1.clusters), (30, 7));
    assert_eq!((p2.articles, p2.irrelevant, p2.quarantined, p2.gated_out), (20, 3, 0, 0));
    assert_eq!((c2.events, c2.clusters), (29, 9));

    let quarantined = run.store.quarantined();
    assert_eq!(quarantined.len(), 1);
    assert_eq!(quarantined[0].stage, "relevance");
    assert_eq!(story_ari(&run.store), 1.0);
}

#[test]
fn rerun_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_corpus(dir.path());
    let before = store_files(dir.path());
    let revision = run.store.revision();
    drop(run);

    // same store, second pass over every stage
    let again = run_corpus(dir.path());
    assert_eq!(again.ingest.stored, 0);
    assert!(again.days.iter().all(|(_, _, c)| !c.changed));
    assert_eq!(again.store.revision(), revision);
    assert_eq!(store_files(dir.path()), before);

    // fresh store, same inputs
    let other = tempfile::tempdir().unwrap();
    run_corpus(other.path());
    assert_eq!(store_files(other.path()), before);
}
