//! Day-level event deduplication: embeddings, cosine similarity, per-pair
//! thresholds from a rule ladder, connected components and conflict splitting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::metrics::adjusted_rand_index;
use crate::model::{Cluster, EventId, MappedEvent};
use crate::provider::{HttpEndpoint, ProviderError};

pub const DEFAULT_DIMENSION: usize = 512;

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Unit-length vector of `dimension()` entries.
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Offline embedder: signed feature hashing of words and character trigrams.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dimension: usize,
}

impl HashedNgramEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    fn add(&self, v: &mut [f64], feature: &str) {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % self.dimension as u64) as usize] += sign;
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn name(&self) -> &str {
        "hashed-ngram"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut v = vec![0.0; self.dimension];
        let words = crate::text::words(text);
        if words.is_empty() {
            self.add(&mut v, "\u{0}empty");
        }
        for w in &words {
            self.add(&mut v, &format!("w:{w}"));
            let padded: Vec<char> = format!("<{w}>").chars().collect();
            for tri in padded.windows(3) {
                self.add(&mut v, &format!("c:{}", tri.iter().collect::<String>()));
            }
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Sentence-embedding endpoint: `{model, input} -> {embedding}`.
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    model: String,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>, dimension: usize) -> Self {
        Self {
            endpoint,
            model: model.into(),
            dimension,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        "http-embedding"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let reply: EmbedReply = self.endpoint.post_json(&EmbedRequest {
            model: &self.model,
            input: text,
        })?;
        if reply.embedding.len() != self.dimension {
            return Err(ProviderError::Rejected(format!(
                "expected {} dimensions, got {}",
                self.dimension,
                reply.embedding.len()
            )));
        }
        let mut v = reply.embedding;
        normalize(&mut v);
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Symmetric n×n matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    /// Identity-diagonal matrix with every off-diagonal entry 0.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    /// Builds from full rows; the upper triangle wins and the diagonal is forced to 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::identity(n);
        for i in 0..n {
            assert_eq!(rows[i].len(), n, "similarity rows must be square");
            for j in i + 1..n {
                m.set(i, j, rows[i][j]);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        if i != j {
            self.data[i * self.n + j] = value;
            self.data[j * self.n + i] = value;
        }
    }

    /// Mean similarity of `i` to the members of `group`.
    pub fn mean_to(&self, i: usize, group: &[usize]) -> f64 {
        if group.is_empty() {
            return 0.0;
        }
        group.iter().map(|&j| self.get(i, j)).sum::<f64>() / group.len() as f64
    }
}

/// Symmetric binary matrix with a true diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMatrix {
    n: usize,
    data: Vec<bool>,
}

impl MatchMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![false; n * n];
        for i in 0..n {
            data[i * n + i] = true;
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let n = rows.len();
        let mut m = Self::identity(n);
        for i in 0..n {
            for j in i + 1..n {
                m.set(i, j, rows[i][j] != 0 || rows[j][i] != 0);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i != j {
            self.data[i * self.n + j] = value;
            self.data[j * self.n + i] = value;
        }
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }
}

/// Threshold of a rule: a similarity cut-off or a hard "never match".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Never,
    At(f64),
}

impl Threshold {
    pub fn admits(self, sim: f64) -> bool {
        match self {
            Threshold::Never => false,
            Threshold::At(t) => sim >= t,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Never => f.write_str("never"),
            Threshold::At(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Never => s.serialize_str("never"),
            Threshold::At(t) => s.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(t) if (0.0..=1.0).contains(&t) => Ok(Threshold::At(t)),
            Repr::Num(t) => Err(serde::de::Error::custom(format!("threshold {t} outside [0, 1]"))),
            Repr::Word(w) if w.eq_ignore_ascii_case("never") => Ok(Threshold::Never),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("unknown threshold {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiseaseRelation {
    Same,
    Different,
    /// At least one side is the catch-all disease.
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelRelation {
    Same,
    Different,
    /// At least one side is blank.
    Blank,
}

/// Features of an event pair that the rule ladder can test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairFeatures {
    pub disease: DiseaseRelation,
    pub state: LevelRelation,
    pub district: LevelRelation,
    pub subdistrict: LevelRelation,
    pub number_conflict: bool,
}

fn level_relation(a: &str, b: &str) -> LevelRelation {
    if a.is_empty() || b.is_empty() {
        LevelRelation::Blank
    } else if a.eq_ignore_ascii_case(b) {
        LevelRelation::Same
    } else {
        LevelRelation::Different
    }
}

impl PairFeatures {
    pub fn of(a: &MappedEvent, b: &MappedEvent) -> Self {
        let disease = if a.disease_ambiguous() || b.disease_ambiguous() {
            DiseaseRelation::Ambiguous
        } else if a.standard_disease.eq_ignore_ascii_case(&b.standard_disease) {
            DiseaseRelation::Same
        } else {
            DiseaseRelation::Different
        };
        let number_conflict = match (a.raw.number, b.raw.number) {
            (Some(x), Some(y)) => {
                x != y && a.raw.incident == b.raw.incident && a.raw.incident_type == b.raw.incident_type
            }
            _ => false,
        };
        Self {
            disease,
            state: level_relation(&a.state, &b.state),
            district: level_relation(&a.district, &b.district),
            subdistrict: level_relation(&a.subdistrict, &b.subdistrict),
            number_conflict,
        }
    }

    /// Some location level is filled on both sides with different values.
    pub fn location_conflict(&self) -> bool {
        [self.state, self.district, self.subdistrict].contains(&LevelRelation::Different)
    }

    /// Both diseases canonical and different, or a location level disagrees.
    pub fn conflicting(&self) -> bool {
        self.disease == DiseaseRelation::Different || self.location_conflict()
    }
}

/// Conjunction of feature tests; absent fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulePredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disease: Option<DiseaseRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<LevelRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub district: Option<LevelRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdistrict: Option<LevelRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_conflict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number_conflict: Option<bool>,
}

impl RulePredicate {
    pub fn is_catch_all(&self) -> bool {
        *self == RulePredicate::default()
    }

    pub fn matches(&self, f: &PairFeatures) -> bool {
        self.disease.is_none_or(|d| d == f.disease)
            && self.state.is_none_or(|s| s == f.state)
            && self.district.is_none_or(|s| s == f.district)
            && self.subdistrict.is_none_or(|s| s == f.subdistrict)
            && self.location_conflict.is_none_or(|c| c == f.location_conflict())
            && self.number_conflict.is_none_or(|c| c == f.number_conflict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    #[serde(default)]
    pub when: RulePredicate,
    pub threshold: Threshold,
}

#[derive(Debug, thiserror::Error)]
pub enum RulesError {
    #[error("cannot read rules: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed rules: {0}")]
    Parse(String),
    #[error("rule ladder must end with a rule that has no conditions")]
    MissingDefault,
}

/// Ordered rule ladder; the first rule whose predicate holds decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRules {
    #[serde(rename = "rule")]
    pub rules: Vec<Rule>,
}

const DEFAULT_RULES: &str = include_str!("../assets/rules.toml");

impl Default for ThresholdRules {
    fn default() -> Self {
        Self::from_toml(DEFAULT_RULES).expect("bundled rules are valid")
    }
}

impl ThresholdRules {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RulesError> {
        let r = Self { rules };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), RulesError> {
        match self.rules.last() {
            Some(r) if r.when.is_catch_all() => Ok(()),
            _ => Err(RulesError::MissingDefault),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, RulesError> {
        let r: Self = toml::from_str(text).map_err(|e| RulesError::Parse(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rules serialize")
    }

    /// Index of the first rule that applies. Validated ladders always have one.
    pub fn rule_for(&self, f: &PairFeatures) -> usize {
        self.rules
            .iter()
            .position(|r| r.when.matches(f))
            .unwrap_or(self.rules.len() - 1)
    }

    /// A ladder under which no two events ever match.
    pub fn never() -> Self {
        Self {
            rules: vec![Rule {
                name: "never".into(),
                when: RulePredicate::default(),
                threshold: Threshold::Never,
            }],
        }
    }
}

pub fn pair_threshold(a: &MappedEvent, b: &MappedEvent, rules: &ThresholdRules) -> Threshold {
    rules.rules[rules.rule_for(&PairFeatures::of(a, b))].threshold
}

/// An event together with the text that represents it for embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterItem {
    pub event: MappedEvent,
    pub text: String,
}

pub fn similarity_matrix(items: &[ClusterItem], provider: &dyn EmbeddingProvider) -> Result<SimilarityMatrix, ProviderError> {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    for it in items {
        if !cache.contains_key(it.text.as_str()) {
            cache.insert(&it.text, provider.embed(&it.text)?);
        }
    }
    let vecs: Vec<&Vec<f64>> = items.iter().map(|it| &cache[it.text.as_str()]).collect();
    let mut m = SimilarityMatrix::identity(items.len());
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            m.set(i, j, cosine(vecs[i], vecs[j]));
        }
    }
    Ok(m)
}

pub fn match_matrix(sim: &SimilarityMatrix, events: &[&MappedEvent], rules: &ThresholdRules) -> MatchMatrix {
    assert_eq!(sim.len(), events.len(), "similarity and event counts differ");
    let mut b = MatchMatrix::identity(events.len());
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            b.set(i, j, pair_threshold(events[i], events[j], rules).admits(sim.get(i, j)));
        }
    }
    b
}

/// Components ordered by smallest member, members ascending.
pub fn connected_components(b: &MatchMatrix) -> Vec<Vec<usize>> {
    let n = b.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            for j in 0..n {
                if !seen[j] && b.get(i, j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

pub fn conflicts(a: &MappedEvent, b: &MappedEvent) -> bool {
    PairFeatures::of(a, b).conflicting()
}

/// Splits a component so no part holds a conflicting pair. Unambiguous events
/// are grouped by disease and location; an ambiguous event (catch-all disease,
/// or a location level blank where another member has it) joins the compatible
/// part it is most similar to on average. Ambiguous events are placed least
/// ambiguous first, then by event id, so the result does not depend on input
/// order.
pub fn conflict_split(cluster: &[usize], events: &[&MappedEvent], sim: &SimilarityMatrix) -> Vec<Vec<usize>> {
    let mut members = cluster.to_vec();
    members.sort_unstable();
    let has_conflict = members
        .iter()
        .enumerate()
        .any(|(k, &i)| members[k + 1..].iter().any(|&j| conflicts(events[i], events[j])));
    if !has_conflict {
        return vec![members];
    }
    let filled: [bool; 3] =
        std::array::from_fn(|l| members.iter().any(|&i| !events[i].levels()[l].is_empty()));
    let ambiguous = |i: usize| {
        let e = events[i];
        e.disease_ambiguous() || (0..3).any(|l| filled[l] && e.levels()[l].is_empty())
    };

    let mut by_signature: BTreeMap<[String; 4], Vec<usize>> = BTreeMap::new();
    for &i in members.iter().filter(|&&i| !ambiguous(i)) {
        let e = events[i];
        let key = [
            e.standard_disease.to_lowercase(),
            e.state.to_lowercase(),
            e.district.to_lowercase(),
            e.subdistrict.to_lowercase(),
        ];
        by_signature.entry(key).or_default().push(i);
    }
    // parts and placements follow event content, never input order
    let mut parts: Vec<Vec<usize>> = by_signature.into_values().collect();
    let mut pending: Vec<(bool, usize, crate::model::EventId, usize)> = members
        .iter()
        .filter(|&&i| ambiguous(i))
        .map(|&i| {
            let e = events[i];
            let blanks = (0..3).filter(|&l| filled[l] && e.levels()[l].is_empty()).count();
            (e.disease_ambiguous(), blanks, e.id(), i)
        })
        .collect();
    pending.sort();
    for (.., i) in pending {
        let mut best: Option<(usize, f64)> = None;
        for (p, part) in parts.iter().enumerate() {
            if part.iter().any(|&j| conflicts(events[i], events[j])) {
                continue;
            }
            let score = sim.mean_to(i, part);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((p, score));
            }
        }
        match best {
            Some((p, _)) => parts[p].push(i),
            None => parts.push(vec![i]),
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts.sort();
    parts
}

/// Member with the highest mean similarity to the group; earliest on ties.
pub fn representative(group: &[usize], sim: &SimilarityMatrix) -> usize {
    let mut best = group[0];
    let mut best_score = sim.mean_to(best, group);
    for &i in &group[1..] {
        let s = sim.mean_to(i, group);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Partition of indices for a precomputed similarity matrix.
pub fn partition(events: &[&MappedEvent], sim: &SimilarityMatrix, rules: &ThresholdRules) -> Vec<Vec<usize>> {
    let b = match_matrix(sim, events, rules);
    let mut parts: Vec<Vec<usize>> = connected_components(&b)
        .iter()
        .flat_map(|c| conflict_split(c, events, sim))
        .collect();
    parts.sort();
    parts
}

/// Sorts by event id and drops repeated ids, keeping the first.
pub fn canonical_order(items: &[ClusterItem]) -> Vec<ClusterItem> {
    let mut sorted: Vec<(EventId, &ClusterItem)> = items.iter().map(|it| (it.event.id(), it)).collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    sorted.into_iter().map(|(_, it)| it.clone()).collect()
}

pub fn cluster_day(
    day: NaiveDate,
    items: &[ClusterItem],
    provider: &dyn EmbeddingProvider,
    rules: &ThresholdRules,
) -> Result<Vec<Cluster>, ProviderError> {
    let items = canonical_order(items);
    let sim = similarity_matrix(&items, provider)?;
    let events: Vec<&MappedEvent> = items.iter().map(|it| &it.event).collect();
    let ids: Vec<EventId> = events.iter().map(|e| e.id()).collect();
    Ok(partition(&events, &sim, rules)
        .into_iter()
        .map(|group| {
            let rep = ids[representative(&group, &sim)].clone();
            Cluster::new(day, group.iter().map(|&i| ids[i].clone()).collect(), rep)
        })
        .collect())
}

/// One labeled day for threshold tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDay {
    pub day: NaiveDate,
    pub items: Vec<ClusterItem>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub rules: ThresholdRules,
    pub mean_ari: f64,
    pub evaluated: usize,
}

/// One line of a labeled clustering file (NDJSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub day: NaiveDate,
    pub label: String,
    pub text: String,
    pub event: MappedEvent,
}

#[derive(Debug, thiserror::Error)]
pub enum LabeledError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Groups labeled items by day, keeping file order within a day.
pub fn read_labeled_days(reader: impl std::io::BufRead) -> Result<Vec<LabeledDay>, LabeledError> {
    let mut days: BTreeMap<NaiveDate, LabeledDay> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: LabeledItem = serde_json::from_str(&line).map_err(|e| LabeledError::Line {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let day = days.entry(item.day).or_insert_with(|| LabeledDay {
            day: item.day,
            items: Vec::new(),
            labels: Vec::new(),
        });
        day.items.push(ClusterItem {
            event: item.event,
            text: item.text,
        });
        day.labels.push(item.label);
    }
    Ok(days.into_values().collect())
}

/// Parses a grid file: numbers in [0, 1] separated by whitespace or commas,
/// `#` comments allowed. Output is sorted and deduplicated.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let v: f64 = tok.parse().map_err(|_| format!("not a number: {tok:?}"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("threshold {v} outside [0, 1]"));
            }
            out.push(v);
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    if out.is_empty() {
        return Err("empty grid".into());
    }
    Ok(out)
}

/// Candidate thresholds `start, start+step, ..., ≤ end`, rounded to 1e-6.
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let v = ((start + k as f64 * step) * 1e6).round() / 1e6;
        if v > end + 1e-9 {
            break;
        }
        out.push(v);
        k += 1;
    }
    out
}

struct PreparedDay {
    events: Vec<MappedEvent>,
    sim: SimilarityMatrix,
    labels: Vec<String>,
}

fn prepare(days: &[LabeledDay], provider: &dyn EmbeddingProvider) -> Result<Vec<PreparedDay>, ProviderError> {
    days.iter()
        .filter(|d| d.items.len() >= 2)
        .map(|d| {
            let sim = similarity_matrix(&d.items, provider)?;
            Ok(PreparedDay {
                events: d.items.iter().map(|it| it.event.clone()).collect(),
                sim,
                labels: d.labels.clone(),
            })
        })
        .collect()
}

fn mean_ari(days: &[PreparedDay], rules: &ThresholdRules) -> f64 {
    if days.is_empty() {
        return 0.0;
    }
    let total: f64 = days
        .iter()
        .map(|d| {
            let events: Vec<&MappedEvent> = d.events.iter().collect();
            let mut predicted = vec![0usize; events.len()];
            for (c, group) in partition(&events, &d.sim, rules).iter().enumerate() {
                for &i in group {
                    predicted[i] = c;
                }
            }
            adjusted_rand_index(&d.labels, &predicted).unwrap_or(0.0)
        })
        .sum();
    total / days.len() as f64
}

/// Mean per-day ARI of a ladder on labeled days.
pub fn evaluate_rules(days: &[LabeledDay], provider: &dyn EmbeddingProvider, rules: &ThresholdRules) -> Result<f64, ProviderError> {
    Ok(mean_ari(&prepare(days, provider)?, rules))
}

/// Exhaustive search over the numeric thresholds of `base`; `never` rules stay
/// fixed. `base` is kept unless a grid point scores strictly higher, and among
/// those the first maximum in grid order wins. Afterwards each slot that can
/// return to its base value without lowering the score does, so thresholds the
/// data cannot inform (no pair ever reaches their rule) keep their base value.
pub fn tune_rules(
    days: &[LabeledDay],
    provider: &dyn EmbeddingProvider,
    base: &ThresholdRules,
    candidates: &[f64],
) -> Result<TuneResult, ProviderError> {
    let prepared = prepare(days, provider)?;
    let slots: Vec<usize> = base
        .rules
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.threshold, Threshold::At(_)))
        .map(|(i, _)| i)
        .collect();
    let mut current = base.clone();
    let mut best = (mean_ari(&prepared, base), base.clone());
    let total = if slots.is_empty() { 1 } else { candidates.len().pow(slots.len() as u32) };
    for k in 0..total {
        // first slot varies slowest
        let mut rest = k;
        for &r in slots.iter().rev() {
            current.rules[r].threshold = Threshold::At(candidates[rest % candidates.len()]);
            rest /= candidates.len();
        }
        let score = mean_ari(&prepared, &current);
        if score > best.0 + 1e-12 {
            best = (score, current.clone());
        }
    }
    // a slot whose value does not move the score goes back to its base value
    for &r in &slots {
        let mut trial = best.1.clone();
        trial.rules[r].threshold = base.rules[r].threshold;
        if mean_ari(&prepared, &trial) >= best.0 - 1e-12 {
            best.1 = trial;
        }
    }
    Ok(TuneResult {
        rules: best.1,
        mean_ari: best.0,
        evaluated: total,
    })
}
