//! Clustering, extraction and classification metrics.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::model::{Incident, IncidentType, MappedEvent, RawEvent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("labelings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("gold and predicted articles are not aligned at index {0}")]
    MisalignedArticles(usize),
    #[error("AUC needs both positive and negative examples")]
    SingleClassInput,
}

/// Dense contingency table between two labelings.
#[derive(Debug, Clone)]
pub struct Contingency {
    pub n: usize,
    pub cells: Vec<Vec<u64>>,
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
}

fn dense<T: Hash + Eq>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

impl Contingency {
    pub fn new<A: Hash + Eq, B: Hash + Eq>(y: &[A], y_hat: &[B]) -> Result<Self, MetricsError> {
        if y.len() != y_hat.len() {
            return Err(MetricsError::LengthMismatch(y.len(), y_hat.len()));
        }
        let (a, ra) = dense(y);
        let (b, rb) = dense(y_hat);
        let mut cells = vec![vec![0u64; rb]; ra];
        for (&i, &j) in a.iter().zip(&b) {
            cells[i][j] += 1;
        }
        let rows = cells.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..rb).map(|j| cells.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            n: y.len(),
            cells,
            rows,
            cols,
        })
    }

    fn entropy(counts: &[u64], n: usize) -> f64 {
        let n = n as f64;
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    pub fn entropy_y(&self) -> f64 {
        Self::entropy(&self.rows, self.n)
    }

    pub fn entropy_y_hat(&self) -> f64 {
        Self::entropy(&self.cols, self.n)
    }

    pub fn entropy_joint(&self) -> f64 {
        let cells: Vec<u64> = self.cells.iter().flatten().copied().collect();
        Self::entropy(&cells, self.n)
    }

    /// `H(y) + H(ŷ) - H(y, ŷ)`; exact for identical partitions.
    pub fn mutual_information(&self) -> f64 {
        (self.entropy_y() + self.entropy_y_hat() - self.entropy_joint()).max(0.0)
    }
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Chance-adjusted Rand index. Identical trivial partitions (one cluster or
/// all singletons on both sides) score 1.0.
pub fn adjusted_rand_index<A: Hash + Eq, B: Hash + Eq>(y: &[A], y_hat: &[B]) -> Result<f64, MetricsError> {
    if y.len() < 2 {
        return Err(MetricsError::DegenerateInput("ARI needs at least two items".into()));
    }
    let t = Contingency::new(y, y_hat)?;
    let index: f64 = t.cells.iter().flatten().map(|&c| comb2(c)).sum();
    let a: f64 = t.rows.iter().map(|&c| comb2(c)).sum();
    let b: f64 = t.cols.iter().map(|&c| comb2(c)).sum();
    let expected = a * b / comb2(t.n as u64);
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// `2 I / (H(y) + H(ŷ))`; two single-cluster labelings score 1.0.
pub fn normalized_mutual_information<A: Hash + Eq, B: Hash + Eq>(y: &[A], y_hat: &[B]) -> Result<f64, MetricsError> {
    if y.is_empty() {
        return Err(MetricsError::DegenerateInput("no items".into()));
    }
    let t = Contingency::new(y, y_hat)?;
    let (hy, hk) = (t.entropy_y(), t.entropy_y_hat());
    if hy + hk == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * t.mutual_information() / (hy + hk)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v: f64,
}

/// Homogeneity, completeness and their harmonic mean `2hc / (h + c)`.
pub fn v_measure<A: Hash + Eq, B: Hash + Eq>(y: &[A], y_hat: &[B]) -> Result<VMeasure, MetricsError> {
    if y.is_empty() {
        return Err(MetricsError::DegenerateInput("no items".into()));
    }
    let t = Contingency::new(y, y_hat)?;
    let (hy, hk, hj) = (t.entropy_y(), t.entropy_y_hat(), t.entropy_joint());
    // H(y|ŷ) = H(y, ŷ) - H(ŷ)
    let homogeneity = if hy == 0.0 { 1.0 } else { (1.0 - (hj - hk).max(0.0) / hy).clamp(0.0, 1.0) };
    let completeness = if hk == 0.0 { 1.0 } else { (1.0 - (hj - hy).max(0.0) / hk).clamp(0.0, 1.0) };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub ari: f64,
    pub nmi: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

pub fn clustering_scores<A: Hash + Eq, B: Hash + Eq>(y: &[A], y_hat: &[B]) -> Result<ClusteringScores, MetricsError> {
    let v = v_measure(y, y_hat)?;
    Ok(ClusteringScores {
        ari: adjusted_rand_index(y, y_hat)?,
        nmi: normalized_mutual_information(y, y_hat)?,
        homogeneity: v.homogeneity,
        completeness: v.completeness,
        v_measure: v.v,
    })
}

impl fmt::Display for ClusteringScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>8}", "metric", "value")?;
        for (k, v) in [
            ("ARI", self.ari),
            ("NMI", self.nmi),
            ("homogeneity", self.homogeneity),
            ("completeness", self.completeness),
            ("V-measure", self.v_measure),
        ] {
            writeln!(f, "{k:<14}{v:>8.4}")?;
        }
        Ok(())
    }
}

/// A comparable event: casefolded disease and location with the incident fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventTuple {
    pub disease: String,
    pub location: String,
    pub incident: Incident,
    pub incident_type: IncidentType,
    #[serde(default)]
    pub number: Option<u64>,
}

impl EventTuple {
    pub fn new(disease: &str, location: &str, incident: Incident, incident_type: IncidentType, number: Option<u64>) -> Self {
        Self {
            disease: crate::model::collapse_whitespace(disease).to_lowercase(),
            location: crate::model::collapse_whitespace(location).to_lowercase(),
            incident,
            incident_type: if number.is_none() { IncidentType::Unspecified } else { incident_type },
            number,
        }
    }

    pub fn from_raw(e: &RawEvent) -> Self {
        Self::new(&e.disease, &e.location, e.incident, e.incident_type, e.number)
    }

    /// Standard disease and the finest mapped location level.
    pub fn from_mapped(e: &MappedEvent) -> Self {
        Self::new(
            &e.standard_disease,
            e.deepest_location(),
            e.raw.incident,
            e.raw.incident_type,
            e.raw.number,
        )
    }
}

/// Gold annotations for one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldArticle {
    pub article_id: String,
    pub relevant: bool,
    pub events: Vec<EventTuple>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalArticle {
    pub article_id: String,
    pub relevant: bool,
    pub gold: Vec<EventTuple>,
    pub predicted: Vec<EventTuple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Empty prediction against empty gold counts as perfect.
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            if gold == 0 { 1.0 } else { 0.0 }
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            if predicted == 0 { 1.0 } else { 0.0 }
        } else {
            tp as f64 / gold as f64
        };
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Greedy multiset matching on exact equality: each gold item matches at most once.
pub fn matched<T: Eq>(gold: &[T], predicted: &[T]) -> usize {
    let mut used = vec![false; gold.len()];
    predicted
        .iter()
        .filter(|p| {
            if let Some(i) = (0..gold.len()).find(|&i| !used[i] && gold[i] == **p) {
                used[i] = true;
                true
            } else {
                false
            }
        })
        .count()
}

pub fn article_prf(gold: &[EventTuple], predicted: &[EventTuple]) -> Prf {
    Prf::from_counts(matched(gold, predicted), predicted.len(), gold.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionMetrics {
    pub event: Prf,
    pub disease: Prf,
    pub location: Prf,
    pub exact_match_accuracy: f64,
    pub detection_rate: f64,
}

fn same_multiset<T: Ord + Clone>(a: &[T], b: &[T]) -> bool {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort();
    b.sort();
    a == b
}

/// Micro-averaged over all articles.
pub fn extraction_metrics(eval: &[EvalArticle]) -> ExtractionMetrics {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    let (mut dtp, mut ltp) = (0, 0);
    let mut exact = 0;
    let (mut relevant, mut detected) = (0, 0);
    for a in eval {
        tp += matched(&a.gold, &a.predicted);
        np += a.predicted.len();
        ng += a.gold.len();
        let field = |v: &[EventTuple], f: fn(&EventTuple) -> &String| v.iter().map(f).cloned().collect::<Vec<_>>();
        dtp += matched(&field(&a.gold, |e| &e.disease), &field(&a.predicted, |e| &e.disease));
        ltp += matched(&field(&a.gold, |e| &e.location), &field(&a.predicted, |e| &e.location));
        if same_multiset(&a.gold, &a.predicted) {
            exact += 1;
        }
        if a.relevant {
            relevant += 1;
            if !a.predicted.is_empty() {
                detected += 1;
            }
        }
    }
    let frac = |x: usize, n: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    ExtractionMetrics {
        event: Prf::from_counts(tp, np, ng),
        disease: Prf::from_counts(dtp, np, ng),
        location: Prf::from_counts(ltp, np, ng),
        exact_match_accuracy: frac(exact, eval.len()),
        detection_rate: frac(detected, relevant),
    }
}

/// Pairs gold annotations with predictions by article id.
pub fn align(gold: &[GoldArticle], predicted: &HashMap<String, Vec<EventTuple>>) -> Vec<EvalArticle> {
    gold.iter()
        .map(|g| EvalArticle {
            article_id: g.article_id.clone(),
            relevant: g.relevant,
            gold: g.events.clone(),
            predicted: predicted.get(&g.article_id).cloned().unwrap_or_default(),
        })
        .collect()
}

/// Checks that two per-article lists line up by id.
pub fn check_alignment(gold: &[GoldArticle], eval: &[EvalArticle]) -> Result<(), MetricsError> {
    if gold.len() != eval.len() {
        return Err(MetricsError::MisalignedArticles(gold.len().min(eval.len())));
    }
    match gold.iter().zip(eval).position(|(g, e)| g.article_id != e.article_id) {
        Some(i) => Err(MetricsError::MisalignedArticles(i)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the gold labels contain a single class.
    pub auc_roc: Option<f64>,
}

/// Area under the ROC curve from the rank-sum statistic, ties averaged.
pub fn auc_roc(gold: &[bool], scores: &[f64]) -> Result<f64, MetricsError> {
    if gold.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), scores.len()));
    }
    let pos = gold.iter().filter(|&&g| g).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClassInput);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = gold.iter().zip(&ranks).filter(|(g, _)| **g).map(|(_, r)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

pub fn classification_metrics(gold: &[bool], scores: &[f64], threshold: f64) -> Result<ClassificationMetrics, MetricsError> {
    if gold.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), scores.len()));
    }
    if gold.is_empty() {
        return Err(MetricsError::DegenerateInput("no items".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&g, &s) in gold.iter().zip(scores) {
        match (g, s >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(ClassificationMetrics {
        accuracy: ratio(tp + tn, gold.len()),
        precision,
        recall,
        f1: f1(precision, recall),
        auc_roc: auc_roc(gold, scores).ok(),
    })
}
