//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p epiwatch-core --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use common::*;
use epiwatch_core::clustering::{
    cluster_day, conflicts, connected_components, match_matrix, partition, read_labeled_days, HashedNgramEmbedder,
    MatchMatrix, SimilarityMatrix, ThresholdRules, DEFAULT_DIMENSION,
};
use epiwatch_core::extract::llm::{extract_events_llm, PromptConfig};
use epiwatch_core::extract::templates::{
    generate_hypotheses, generate_questions, HypothesisCategory, HypothesisTemplateSet, QuestionCategory,
    QuestionTemplateSet,
};
use epiwatch_core::gazetteer::{Gazetteer, LocationRef};
use epiwatch_core::mapping::{map_disease_llm, map_location, DiseaseSynonymTable, LocationStatus, MapOutcome, Mapper, MappingPrompts};
use epiwatch_core::metrics::{adjusted_rand_index, clustering_scores, normalized_mutual_information, v_measure};
use epiwatch_core::numbers::parse_number;
use epiwatch_core::provider::{ReplayChat, RetryPolicy};
use epiwatch_core::{
    normalize_event, Article, ArticleId, Extractor, Incident, IncidentType, Language, MappedEvent, MappingMethod, RawEvent,
    OTHERS,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde::Deserialize;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ensure_eq<T: PartialEq + std::fmt::Debug>(left: T, right: T, what: &str) -> Check {
    if left == right {
        Ok(())
    } else {
        Err(format!("{what}: got {left:?}, expected {right:?}"))
    }
}

fn criterion(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => Err(payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let elapsed = start.elapsed();
    let result = result.and_then(|()| match budget {
        Some(b) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
        _ => Ok(()),
    });
    match &result {
        Ok(()) => println!("PASS  {name}  ({elapsed:.2?})"),
        Err(e) => println!("FAIL  {name}  ({elapsed:.2?}): {e}"),
    }
    result.is_ok()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

// ---------------------------------------------------------------- clustering

fn worked_example() -> Check {
    let rows = vec![
        vec![1, 0, 0, 0, 1],
        vec![0, 1, 0, 1, 0],
        vec![0, 0, 1, 0, 1],
        vec![0, 1, 0, 1, 0],
        vec![1, 0, 1, 0, 1],
    ];
    let comps = connected_components(&MatchMatrix::from_rows(&rows));
    // Event k is index k-1
    ensure_eq(comps, vec![vec![0, 2, 4], vec![1, 3]], "components")
}

fn union_find(rows: &[Vec<u8>]) -> Vec<Vec<usize>> {
    let n = rows.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in 0..n {
            if rows[i][j] == 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

fn symmetric_from_bits(n: usize, mut bits: u64) -> Vec<Vec<u8>> {
    let mut rows = vec![vec![0u8; n]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = 1;
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = (bits & 1) as u8;
            bits >>= 1;
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    rows
}

fn component_oracle() -> Check {
    let mut checked = 0usize;
    for n in 1..=6usize {
        let pairs = n * (n - 1) / 2;
        for bits in 0..(1u64 << pairs) {
            let rows = symmetric_from_bits(n, bits);
            let got = connected_components(&MatchMatrix::from_rows(&rows));
            ensure!(got == union_find(&rows), "n={n} bits={bits:#b}: {got:?}");
            checked += 1;
        }
    }
    let mut rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    for case in 0..10_000 {
        let n = 7 + (rng.next_u64() % 6) as usize;
        // vary edge density so both sparse and dense graphs occur
        let density = rng.next_u64() % 100;
        let mut rows = vec![vec![0u8; n]; n];
        for i in 0..n {
            rows[i][i] = 1;
            for j in i + 1..n {
                let v = (rng.next_u64() % 100 < density) as u8;
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        let got = connected_components(&MatchMatrix::from_rows(&rows));
        ensure!(got == union_find(&rows), "random case {case} n={n}: {got:?}");
        checked += 1;
    }
    ensure!(checked == 1 + 2 + 8 + 64 + 1024 + 32768 + 10_000, "checked {checked}");
    Ok(())
}

// ------------------------------------------------------------------ metrics

/// Every labeling of `n` items with at most `k` labels, up to renaming.
fn labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(n: usize, k: usize, next: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=next.min(k - 1) {
            cur.push(l);
            rec(n, k, next.max(l + 1), cur, out);
            cur.pop();
        }
    }
    rec(n, k, 0, &mut cur, &mut out);
    out
}

fn oracle_ari(y: &[usize], k: &[usize]) -> f64 {
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            match (y[i] == y[j], k[i] == k[j]) {
                (true, true) => tp += 1.0,
                (false, false) => tn += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
            }
        }
    }
    let den = (tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (tp * tn - fn_ * fp) / den
}

struct Entropies {
    hy: f64,
    hk: f64,
    mi: f64,
    hy_given_k: f64,
    hk_given_y: f64,
}

fn oracle_entropies(y: &[usize], k: &[usize]) -> Entropies {
    let n = y.len() as f64;
    let mut cj: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut cy: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ck: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &b) in y.iter().zip(k) {
        *cj.entry((a, b)).or_default() += 1;
        *cy.entry(a).or_default() += 1;
        *ck.entry(b).or_default() += 1;
    }
    let prob = |c: &usize| *c as f64 / n;
    let joint: BTreeMap<(usize, usize), f64> = cj.iter().map(|(key, c)| (*key, prob(c))).collect();
    let py: BTreeMap<usize, f64> = cy.iter().map(|(key, c)| (*key, prob(c))).collect();
    let pk: BTreeMap<usize, f64> = ck.iter().map(|(key, c)| (*key, prob(c))).collect();
    let h = |m: &BTreeMap<usize, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let mut e = Entropies {
        hy: h(&py),
        hk: h(&pk),
        mi: 0.0,
        hy_given_k: 0.0,
        hk_given_y: 0.0,
    };
    for (&(a, b), &p) in &joint {
        e.mi += p * (p / (py[&a] * pk[&b])).ln();
        e.hy_given_k -= p * (p / pk[&b]).ln();
        e.hk_given_y -= p * (p / py[&a]).ln();
    }
    e
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn metric_oracles() -> Check {
    let mut pairs = 0usize;
    for n in 1..=8 {
        let all = labelings(n, 3);
        for y in &all {
            for k in &all {
                pairs += 1;
                let e = oracle_entropies(y, k);
                let nmi = if e.hy + e.hk == 0.0 { 1.0 } else { 2.0 * e.mi / (e.hy + e.hk) };
                let h = if e.hy == 0.0 { 1.0 } else { 1.0 - e.hy_given_k / e.hy };
                let c = if e.hk == 0.0 { 1.0 } else { 1.0 - e.hk_given_y / e.hk };
                let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };

                let got_nmi = normalized_mutual_information(y, k).map_err(|e| e.to_string())?;
                let got_v = v_measure(y, k).map_err(|e| e.to_string())?;
                ensure!(close(got_nmi, nmi), "NMI {y:?} {k:?}: {got_nmi} vs {nmi}");
                ensure!(close(got_v.homogeneity, h), "homogeneity {y:?} {k:?}: {} vs {h}", got_v.homogeneity);
                ensure!(close(got_v.completeness, c), "completeness {y:?} {k:?}: {} vs {c}", got_v.completeness);
                ensure!(close(got_v.v, v), "V {y:?} {k:?}: {} vs {v}", got_v.v);
                if n >= 2 {
                    let got = adjusted_rand_index(y, k).map_err(|e| e.to_string())?;
                    let want = oracle_ari(y, k);
                    ensure!(close(got, want), "ARI {y:?} {k:?}: {got} vs {want}");
                } else {
                    ensure!(adjusted_rand_index(y, k).is_err(), "ARI on one item must be an error");
                }
            }
        }
    }
    ensure!(pairs > 1_000_000, "only {pairs} labeling pairs");

    // degenerate conventions
    let one = [0, 0, 0, 0];
    let singles = [0, 1, 2, 3];
    for (y, k, ari, nmi, v) in [
        (&one, &one, 1.0, 1.0, 1.0),
        (&singles, &singles, 1.0, 1.0, 1.0),
        (&one, &singles, 0.0, 0.0, 0.0),
        (&singles, &one, 0.0, 0.0, 0.0),
    ] {
        let s = clustering_scores(y, k).map_err(|e| e.to_string())?;
        ensure_eq((s.ari, s.nmi, s.v_measure), (ari, nmi, v), &format!("{y:?} vs {k:?}"))?;
    }
    let s = clustering_scores(&one, &singles).unwrap();
    ensure_eq((s.homogeneity, s.completeness), (1.0, 0.0), "one cluster vs singletons h/c")?;
    ensure!(normalized_mutual_information::<u8, u8>(&[], &[]).is_err(), "empty NMI must fail");
    ensure!(v_measure::<u8, u8>(&[], &[]).is_err(), "empty V must fail");
    ensure!(adjusted_rand_index(&[0, 1], &[0]).is_err(), "length mismatch must fail");
    Ok(())
}

fn metric_sanity() -> Check {
    let f = fs::File::open(fixtures().join("clustering/gold.ndjson")).map_err(|e| e.to_string())?;
    let days = read_labeled_days(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
    let emb = HashedNgramEmbedder::new(DEFAULT_DIMENSION);
    let rules = ThresholdRules::default();
    let mut scored = 0;
    for d in days.iter().filter(|d| d.items.len() >= 2) {
        let clusters = cluster_day(d.day, &d.items, &emb, &rules).map_err(|e| e.to_string())?;
        let mut predicted = vec![usize::MAX; d.items.len()];
        for (c, cl) in clusters.iter().enumerate() {
            for id in &cl.member_ids {
                let i = d.items.iter().position(|it| &it.event.id() == id).unwrap();
                predicted[i] = c;
            }
        }
        let s = clustering_scores(&d.labels, &predicted).map_err(|e| e.to_string())?;
        ensure_eq((s.ari, s.nmi, s.v_measure), (1.0, 1.0, 1.0), &format!("day {}", d.day))?;
        scored += 1;
    }
    ensure!(scored >= 10, "only {scored} days scored");
    Ok(())
}

// --------------------------------------------------------------- extraction

#[derive(Deserialize)]
struct ReplayArticle {
    name: String,
    url: String,
    title: String,
    description: String,
}

fn extraction_replay() -> Check {
    let dir = fixtures().join("replay");
    let chat = ReplayChat::from_file(&dir.join("extraction_chat.json")).map_err(|e| e.to_string())?;
    let articles: Vec<ReplayArticle> =
        serde_json::from_str(&fs::read_to_string(dir.join("extraction_articles.json")).unwrap()).unwrap();
    let cfg = PromptConfig::bundled();
    let fetched = Utc.with_ymd_and_hms(2024, 5, 2, 12, 0, 0).unwrap();
    let mut seen = BTreeSet::new();
    for f in &articles {
        let a = Article::new(&f.url, None, fetched, Language::En, &f.title, &f.description).map_err(|e| e.to_string())?;
        let out = extract_events_llm(&a, &cfg, &chat, 0, &RetryPolicy::immediate(1)).map_err(|e| e.to_string())?;
        let got: Vec<(Incident, IncidentType, Option<u64>)> =
            out.events.iter().map(|e| (e.incident, e.incident_type, e.number)).collect();
        let want = match f.name.as_str() {
            "eluru" => vec![
                (Incident::Case, IncidentType::New, Some(347)),
                (Incident::Death, IncidentType::New, Some(1)),
            ],
            "himachal" => vec![(Incident::Case, IncidentType::New, Some(535))],
            "north-korea" | "mancherial" => vec![],
            other => return Err(format!("unexpected fixture {other}")),
        };
        ensure_eq(got, want, &f.name)?;
        ensure!(out.ungrounded.is_empty() && !out.parse_failed, "{}: flagged output", f.name);
        seen.insert(f.name.clone());
    }
    ensure_eq(seen.len(), 4, "fixture articles")
}

const QUESTIONS: [&str; 22] = [
    "How many new Dengue cases were reported in Pune?",
    "How many new Dengue cases were reported in Pune in the last 24 hours?",
    "How many fresh Dengue cases were reported in Pune?",
    "How many fresh Dengue cases were reported in Pune in the last 24 hours?",
    "How many new Dengue infections were reported in Pune?",
    "How many fresh Dengue infections were reported in Pune?",
    "How many Dengue cases were reported in Pune in 24 hours?",
    "How many new Dengue deaths were reported in Pune?",
    "How many new Dengue deaths were reported in Pune in the last 24 hours?",
    "How many fresh Dengue deaths were reported in Pune?",
    "How many fresh Dengue deaths were reported in Pune in the last 24 hours?",
    "How many new deaths due to Dengue were reported in Pune?",
    "How many Dengue deaths were reported in Pune in 24 hours?",
    "How many total Dengue cases were reported in Pune?",
    "What is the total number of Dengue cases reported in Pune?",
    "How many total cases of Dengue were reported in Pune?",
    "What is the total tally of Dengue cases reported in Pune?",
    "How many total Dengue deaths were reported in Pune?",
    "How many total deaths due to Dengue were reported in Pune?",
    "What is the total number of deaths due to Dengue in Pune?",
    "How many total deaths of Dengue were reported in Pune?",
    "What is the total tally of Dengue deaths in Pune?",
];

const HYPOTHESES: [&str; 22] = [
    "Dengue is spreading in Pune",
    "Dengue was spreading in Pune",
    "Dengue has been spreading in Pune",
    "Cases of Dengue increased in Pune",
    "Cases of Dengue are increasing in Pune",
    "Cases of Dengue have risen in Pune",
    "Cases of Dengue are rising in Pune",
    "A person is infected by Dengue in Pune",
    "A person was infected by Dengue in Pune",
    "A person was diagnosed with Dengue in Pune",
    "A person was affected by Dengue in Pune",
    "People are infected by Dengue in Pune",
    "People were infected by Dengue in Pune",
    "People are suffering from Dengue in Pune",
    "People are sick with Dengue in Pune",
    "A Dengue outbreak was reported in Pune",
    "People died due to Dengue in Pune",
    "Deaths were reported in Pune due to Dengue",
    "Deaths are reported in Pune due to Dengue",
    "People are dying of Dengue in Pune",
    "Deaths have been reported in Pune due to Dengue",
    "Deaths have occurred due to Dengue in Pune",
];

fn template_fidelity() -> Check {
    let qs = generate_questions("Dengue", "Pune", &QuestionTemplateSet::bundled());
    let counts: Vec<usize> = QuestionCategory::ALL
        .iter()
        .map(|c| qs.iter().filter(|(k, _)| k == c).count())
        .collect();
    ensure_eq(counts, vec![7, 6, 4, 5], "question counts")?;
    let text: Vec<&str> = qs.iter().map(|(_, q)| q.as_str()).collect();
    ensure_eq(text, QUESTIONS.to_vec(), "questions")?;

    let hs = generate_hypotheses("Dengue", "Pune", &HypothesisTemplateSet::bundled());
    let counts: Vec<usize> = HypothesisCategory::ALL
        .iter()
        .map(|c| hs.iter().filter(|(k, _)| k == c).count())
        .collect();
    ensure_eq(counts, vec![16, 6], "hypothesis counts")?;
    let text: Vec<&str> = hs.iter().map(|(_, h)| h.as_str()).collect();
    ensure_eq(text, HYPOTHESES.to_vec(), "hypotheses")
}

fn number_parsing() -> Check {
    ensure_eq(parse_number("5,31,814"), Some(531_814), "5,31,814")?;
    ensure_eq(parse_number("Four"), Some(4), "Four")
}

// ------------------------------------------------------------------ mapping

fn data_table() -> DiseaseSynonymTable {
    let data = fixtures().join("data");
    DiseaseSynonymTable::load(&data.join("canonical_diseases.txt"), &data.join("disease_synonyms.csv")).unwrap()
}

fn gazetteer() -> Gazetteer {
    Gazetteer::load(&fixtures().join("data/gazetteer.csv")).unwrap()
}

fn mapping_cases() -> Check {
    let chat = ReplayChat::from_file(&fixtures().join("replay/disease_mapping.json")).map_err(|e| e.to_string())?;
    let table = data_table();
    let prompts = MappingPrompts::bundled();
    for (name, want) in [
        ("Diarrhoea outbreak", "Acute Diarrhoeal Disease"),
        ("Bird flu (H5N1)", "Bird flu"),
        ("Cricket Fever", OTHERS),
    ] {
        let m = map_disease_llm(name, &table, &chat, &prompts, &RetryPolicy::immediate(1));
        ensure_eq(m.standard.as_str(), want, name)?;
    }

    let g = gazetteer();
    let loc = |s: &str, d: &str, sd: &str| LocationRef {
        state: s.into(),
        district: d.into(),
        subdistrict: sd.into(),
    };
    for (raw, want, status) in [
        ("Eluru", loc("Andhra Pradesh", "Eluru", ""), LocationStatus::Mapped),
        ("Calicut", loc("Kerala", "Kozhikode", ""), LocationStatus::Mapped),
        ("Aurangabad", loc("", "", ""), LocationStatus::Ambiguous),
        ("Mainpat", loc("Chhattisgarh", "Surguja", "Mainpat"), LocationStatus::Mapped),
    ] {
        let m = map_location(raw, &g);
        ensure_eq((m.location, m.status), (want, status), raw)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- pipeline

fn pipeline_end_to_end() -> Check {
    let urls = fs::read_to_string(corpus_dir().join("urls.ndjson")).unwrap();
    ensure_eq(urls.lines().filter(|l| !l.trim().is_empty()).count(), 50, "corpus size")?;

    let dir = tempfile::tempdir().unwrap();
    let run = run_corpus(dir.path());
    let golden: Snapshot = serde_json::from_str(&fs::read_to_string(golden_path()).unwrap()).unwrap();
    ensure!(snapshot(&run.store) == golden, "cluster partition differs from the golden snapshot");
    let before = store_files(dir.path());
    let revision = run.store.revision();
    drop(run);

    let again = run_corpus(dir.path());
    ensure_eq(again.store.revision(), revision, "revision after re-run")?;
    ensure!(store_files(dir.path()) == before, "re-run changed the store files");

    let fresh = tempfile::tempdir().unwrap();
    run_corpus(fresh.path());
    ensure!(store_files(fresh.path()) == before, "fresh run differs byte-wise");
    Ok(())
}

// --------------------------------------------------------------- invariants

const DISEASES: [&str; 4] = ["Nipah", "Dengue", "Cholera", OTHERS];
const PLACES: [(&str, &str); 6] = [
    ("Kerala", "Kozhikode"),
    ("Kerala", "Malappuram"),
    ("Kerala", ""),
    ("Maharashtra", "Pune"),
    ("", ""),
    ("Bihar", "Patna"),
];

fn event(i: usize, disease: usize, place: usize, number: Option<u64>) -> MappedEvent {
    let (state, district) = PLACES[place];
    MappedEvent {
        raw: RawEvent {
            disease: DISEASES[disease].into(),
            location: format!("place {place}"),
            incident: Incident::Case,
            incident_type: if number.is_some() { IncidentType::New } else { IncidentType::Unspecified },
            number,
            article_id: ArticleId::from(format!("a{i}").as_str()),
            extractor: Extractor::Llm,
            confidence: None,
        },
        standard_disease: DISEASES[disease].into(),
        state: state.into(),
        district: district.into(),
        subdistrict: String::new(),
        mapping_method: MappingMethod::Table,
        international: false,
    }
}

type DayCase = (Vec<(usize, usize, Option<u64>)>, Vec<f64>);

fn day_strategy() -> impl Strategy<Value = DayCase> {
    (1usize..10).prop_flat_map(|n| {
        (
            proptest::collection::vec((0..DISEASES.len(), 0..PLACES.len(), proptest::option::of(0u64..5)), n),
            proptest::collection::vec(0.0f64..=1.0, n * n),
        )
    })
}

fn build_day(case: &DayCase) -> (Vec<MappedEvent>, SimilarityMatrix) {
    let (spec, raw) = case;
    let n = spec.len();
    let events = spec.iter().enumerate().map(|(i, &(d, p, k))| event(i, d, p, k)).collect();
    let mut rows = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            rows[i][j] = raw[i * n + j];
            rows[j][i] = raw[i * n + j];
        }
    }
    (events, SimilarityMatrix::from_rows(&rows))
}

fn partition_properties() -> Result<(), String> {
    let rules = ThresholdRules::default();
    runner(1000)
        .run(&(day_strategy(), any::<u64>()), |(case, seed)| {
            let (events, sim) = build_day(&case);
            let refs: Vec<&MappedEvent> = events.iter().collect();
            let parts = partition(&refs, &sim, &rules);
            let mut covered: Vec<usize> = parts.iter().flatten().copied().collect();
            covered.sort_unstable();
            let all: Vec<usize> = (0..events.len()).collect();
            prop_assert_eq!(&covered, &all, "not a partition: {:?}", parts);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            for p in &parts {
                for (x, &i) in p.iter().enumerate() {
                    for &j in &p[x + 1..] {
                        let clash = conflicts(refs[i], refs[j]);
                        prop_assert!(!clash, "conflicting pair {} {} in {:?}", i, j, parts);
                    }
                }
            }

            // order invariance: permute events and similarities together
            let n = events.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let prefs: Vec<&MappedEvent> = perm.iter().map(|&i| refs[i]).collect();
            let mut prows = vec![vec![0.0; n]; n];
            for a in 0..n {
                for b in 0..n {
                    prows[a][b] = sim.get(perm[a], perm[b]);
                }
            }
            let permuted = partition(&prefs, &SimilarityMatrix::from_rows(&prows), &rules);
            let as_sets = |ps: &[Vec<usize>], map: &dyn Fn(usize) -> usize| -> BTreeSet<BTreeSet<usize>> {
                ps.iter().map(|p| p.iter().map(|&i| map(i)).collect()).collect()
            };
            prop_assert_eq!(as_sets(&parts, &|i| i), as_sets(&permuted, &|i| perm[i]));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn hierarchy_consistency() -> Result<(), String> {
    let g = Arc::new(gazetteer());
    let valid: BTreeSet<LocationRef> = g
        .nodes()
        .map(|(id, _)| g.location_ref(id))
        .chain(std::iter::once(LocationRef::default()))
        .collect();
    let mapper = Mapper::new(data_table(), Arc::clone(&g));
    let surfaces = [
        "Eluru", "West Godavari", "Aurangabad", "Mainpat", "Surguja", "Kerala", "Calicut", "Kozhikode", "Mallapuram",
        "Bihar", "Patna", "Pune", "Poona", "Maharashtra", "Bombay", "HP", "Shimla", "Iowa", "Pyongyang",
        "Ambikapur", "the village", "Chhattisgarh", "Guwahati", "Hyderabad",
    ];
    let diseases = ["dengue", "Swine flu", "rat fever", "mystery illness", "COVID", "Nipah virus"];
    let strategy = (
        proptest::collection::vec(proptest::sample::select(surfaces.to_vec()), 1..4),
        proptest::sample::select(diseases.to_vec()),
        proptest::option::of(0u64..1000),
    );
    runner(1000)
        .run(&strategy, |(parts, disease, number)| {
            let raw = RawEvent {
                disease: disease.to_string(),
                location: parts.join(", "),
                incident: Incident::Case,
                incident_type: if number.is_some() { IncidentType::Total } else { IncidentType::Unspecified },
                number,
                article_id: ArticleId::from("h"),
                extractor: Extractor::QaNli,
                confidence: Some(0.9),
            };
            if let MapOutcome::Mapped { event, .. } = mapper.map(&raw, None) {
                prop_assert!(event.is_hierarchy_consistent(), "{:?}", event);
                let r = LocationRef {
                    state: event.state.clone(),
                    district: event.district.clone(),
                    subdistrict: event.subdistrict.clone(),
                };
                prop_assert!(valid.contains(&r), "{:?} is not a gazetteer path", r);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn match_matrix_properties() -> Result<(), String> {
    let rules = ThresholdRules::default();
    let strategy = (day_strategy(), any::<prop::sample::Index>(), 0.0f64..=1.0);
    runner(1000)
        .run(&strategy, |(case, pick, raise)| {
            let (events, sim) = build_day(&case);
            let refs: Vec<&MappedEvent> = events.iter().collect();
            let n = events.len();
            let b = match_matrix(&sim, &refs, &rules);
            for i in 0..n {
                prop_assert!(b.get(i, i));
                for j in 0..n {
                    prop_assert_eq!(b.get(i, j), b.get(j, i));
                }
            }
            if n < 2 {
                return Ok(());
            }
            let k = pick.index(n * (n - 1) / 2);
            let (mut i, mut j, mut seen) = (0, 1, 0);
            'find: for a in 0..n {
                for c in a + 1..n {
                    if seen == k {
                        (i, j) = (a, c);
                        break 'find;
                    }
                    seen += 1;
                }
            }
            let mut higher = sim.clone();
            let v = sim.get(i, j) + (1.0 - sim.get(i, j)) * raise;
            higher.set(i, j, v);
            let b2 = match_matrix(&higher, &refs, &rules);
            for a in 0..n {
                for c in 0..n {
                    prop_assert!(!b.get(a, c) || b2.get(a, c), "edge {} {} lost", a, c);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn normalize_idempotent() -> Result<(), String> {
    let text = "[ \t]{0,2}[A-Za-z]{1,6}([ \t\n]{1,3}[A-Za-z0-9]{1,5}){0,3}[ \t]{0,2}";
    let strategy = (
        text,
        text,
        prop_oneof![Just(Incident::Case), Just(Incident::Death)],
        prop_oneof![Just(IncidentType::New), Just(IncidentType::Total), Just(IncidentType::Unspecified)],
        proptest::option::of(0u64..100_000),
        proptest::option::of(-0.5f64..1.5),
    );
    let accepted = std::cell::Cell::new(0usize);
    runner(1000)
        .run(&strategy, |(disease, location, incident, incident_type, number, confidence)| {
            let raw = RawEvent {
                disease,
                location,
                incident,
                incident_type,
                number,
                article_id: ArticleId::from("n"),
                extractor: Extractor::Llm,
                confidence,
            };
            if let Ok(once) = normalize_event(raw) {
                accepted.set(accepted.get() + 1);
                let twice = normalize_event(once.clone());
                prop_assert_eq!(twice.as_ref().ok(), Some(&once));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    // the generator must reach the interesting branch often enough
    let accepted = accepted.get();
    ensure!(accepted >= 300, "only {accepted} of 1000 generated events were valid");
    Ok(())
}

fn invariant_suites() -> Check {
    let mut failures = HashMap::new();
    for (name, f) in [
        ("partition", partition_properties as fn() -> Result<(), String>),
        ("hierarchy", hierarchy_consistency),
        ("match-matrix", match_matrix_properties),
        ("normalize_event", normalize_idempotent),
    ] {
        if let Err(e) = f() {
            failures.insert(name, e);
        }
    }
    ensure!(failures.is_empty(), "{failures:?}");
    Ok(())
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let secs = Duration::from_secs;
    let results = [
        criterion("clustering worked example", Some(secs(1)), worked_example),
        criterion("component oracle", Some(secs(30)), component_oracle),
        criterion("metric oracles", Some(secs(60)), metric_oracles),
        criterion("metric sanity", None, metric_sanity),
        criterion("extraction regression (replayed)", Some(secs(5)), extraction_replay),
        criterion("qa/nli template fidelity", None, template_fidelity),
        criterion("number parsing", None, number_parsing),
        criterion("mapping", None, mapping_cases),
        criterion("pipeline end-to-end", Some(secs(120)), pipeline_end_to_end),
        criterion("invariant suites", None, invariant_suites),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
