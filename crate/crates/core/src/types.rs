//! Shared domain types: sentences, embeddings, clusters, intent labels and
//! iteration logs. All types are immutable value objects once constructed.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque unique token identifying one corpus sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentenceId(pub String);

impl SentenceId {
    pub fn new(id: impl Into<String>) -> Self {
        SentenceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dialogue role of a sentence or cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Customer,
    Agent,
}

/// One corpus sentence with optional gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: SentenceId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_role: Option<Role>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate sentence id {0}")]
    DuplicateId(String),
    #[error("sentence {0} has empty text")]
    EmptyText(String),
}

/// An in-memory sentence corpus with an id -> row index.
///
/// Row `i` of any aligned [`EmbeddingMatrix`] corresponds to `records[i]`.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<SentenceRecord>,
    index: HashMap<SentenceId, usize>,
}

impl Corpus {
    pub fn new(records: Vec<SentenceRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(rec.id.to_string()));
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(rec.id.to_string()));
            }
        }
        Ok(Corpus { records, index })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn row_of(&self, id: &SentenceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn record(&self, id: &SentenceId) -> Option<&SentenceRecord> {
        self.row_of(id).map(|i| &self.records[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &SentenceId> {
        self.records.iter().map(|r| &r.id)
    }

    /// Gold-label lookup keyed by sentence text, used by reference oracles.
    pub fn gold_by_text(&self) -> HashMap<&str, &str> {
        self.records
            .iter()
            .filter_map(|r| r.gold_label.as_deref().map(|l| (r.text.as_str(), l)))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding matrix is empty")]
    Empty,
    #[error("embedding dimension must be >= 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("row {0} has {1} components, expected {2}")]
    RaggedRow(usize, usize, usize),
    #[error("row {0} contains a non-finite component")]
    NonFinite(usize),
    #[error("row {row} has norm {norm} but the matrix is marked normalized")]
    NotNormalized { row: usize, norm: f64 },
}

/// Dense row-per-sentence embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    n_rows: usize,
    dim: usize,
    normalized: bool,
}

const NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        if rows.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        let dim = rows[0].len();
        if dim < 2 {
            return Err(EmbeddingError::DimensionTooSmall(dim));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(EmbeddingError::RaggedRow(i, row.len(), dim));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite(i));
            }
            data.extend_from_slice(row);
        }
        Ok(EmbeddingMatrix {
            data,
            n_rows: rows.len(),
            dim,
            normalized: false,
        })
    }

    /// Builds a matrix that is asserted to be row-normalized.
    pub fn from_rows_normalized(rows: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        let m = Self::from_rows(rows)?;
        for i in 0..m.n_rows {
            let norm = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(EmbeddingError::NotNormalized { row: i, norm });
            }
        }
        Ok(EmbeddingMatrix {
            normalized: true,
            ..m
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// L2-normalizes every row in place. Zero rows are left untouched.
    pub fn l2_normalize(&mut self) {
        for row in self.data.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        self.normalized = true;
    }

    /// Copies the given rows into a new matrix, preserving order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        EmbeddingMatrix {
            data,
            n_rows: rows.len(),
            dim: self.dim,
            normalized: self.normalized,
        }
    }
}

/// Coherence verdict for a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Good,
    Bad,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Good => f.write_str("Good"),
            Verdict::Bad => f.write_str("Bad"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("malformed intent label {0:?}: expected exactly one hyphen separating two non-empty tokens")]
    MalformedLabel(String),
}

/// Hyphen code points accepted as the action/objective separator.
const SEPARATORS: [char; 7] = [
    '-', '\u{2010}', '\u{2011}', '\u{2012}', '\u{2013}', '\u{2014}', '\u{2015}',
];

/// Structured two-part intent name, e.g. `inquire-promotion`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntentLabel {
    pub action: String,
    pub objective: String,
    pub raw: String,
}

impl IntentLabel {
    /// The label every naming fallback resolves to.
    pub fn unknown() -> Self {
        IntentLabel {
            action: "unknown".to_string(),
            objective: "unknown".to_string(),
            raw: "unknown-unknown".to_string(),
        }
    }

    /// Canonical `action-objective` form.
    pub fn canonical(&self) -> String {
        format!("{}-{}", self.action, self.objective)
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.action, self.objective)
    }
}

/// Parses an `Action-Objective` label.
///
/// Exactly one hyphen (ASCII or U+2010..U+2015) must separate two non-empty
/// tokens. ASCII letters are lowercased; non-ASCII characters are kept
/// verbatim.
pub fn parse_intent_label(raw: &str) -> Result<IntentLabel, LabelError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(LabelError::MalformedLabel(raw.to_string()));
    }
    let mut parts = Vec::with_capacity(2);
    let mut current = String::new();
    let mut separators = 0usize;
    for c in trimmed.chars() {
        if SEPARATORS.contains(&c) {
            separators += 1;
            parts.push(std::mem::take(&mut current));
        } else {
            current.push(c);
        }
    }
    parts.push(current);
    if separators != 1 {
        return Err(LabelError::MalformedLabel(raw.to_string()));
    }
    let normalize = |s: &str| -> String { s.trim().chars().map(|c| c.to_ascii_lowercase()).collect() };
    let action = normalize(&parts[0]);
    let objective = normalize(&parts[1]);
    if action.is_empty() || objective.is_empty() {
        return Err(LabelError::MalformedLabel(raw.to_string()));
    }
    Ok(IntentLabel {
        action,
        objective,
        raw: trimmed.to_string(),
    })
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("duplicate member id {0}")]
    DuplicateMember(String),
    #[error("clusters are not disjoint: id {0} appears more than once")]
    NotDisjoint(String),
}

/// One intent cluster: a non-empty set of sentence ids with optional verdict,
/// label and role slots filled in by later pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub member_ids: Vec<SentenceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<IntentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default)]
    pub low_confidence: bool,
}

impl Cluster {
    /// Builds a cluster from member ids, sorting them for determinism.
    pub fn new(mut member_ids: Vec<SentenceId>) -> Result<Self, ClusterError> {
        if member_ids.is_empty() {
            return Err(ClusterError::EmptyCluster);
        }
        member_ids.sort();
        for pair in member_ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(ClusterError::DuplicateMember(pair[0].to_string()));
            }
        }
        Ok(Cluster {
            member_ids,
            verdict: None,
            label: None,
            role: None,
            low_confidence: false,
        })
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// A set of clusters produced by one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<Cluster>,
    pub source_iteration: u32,
}

impl ClusterAssignment {
    pub fn new(clusters: Vec<Cluster>, source_iteration: u32) -> Result<Self, ClusterError> {
        let assignment = ClusterAssignment {
            clusters,
            source_iteration,
        };
        assignment.check_disjoint()?;
        Ok(assignment)
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn total_members(&self) -> usize {
        self.clusters.iter().map(|c| c.len()).sum()
    }

    /// Verifies pairwise disjointness in O(total members).
    pub fn check_disjoint(&self) -> Result<(), ClusterError> {
        let mut seen = HashSet::with_capacity(self.total_members());
        for cluster in &self.clusters {
            for id in &cluster.member_ids {
                if !seen.insert(id) {
                    return Err(ClusterError::NotDisjoint(id.to_string()));
                }
            }
        }
        Ok(())
    }

    /// True when the clusters exactly cover `ids` with no duplicates.
    pub fn is_partition_of<'a>(&self, ids: impl IntoIterator<Item = &'a SentenceId>) -> bool {
        let expected: HashSet<&SentenceId> = ids.into_iter().collect();
        let mut seen = HashSet::with_capacity(expected.len());
        for cluster in &self.clusters {
            for id in &cluster.member_ids {
                if !expected.contains(id) || !seen.insert(id) {
                    return false;
                }
            }
        }
        seen.len() == expected.len()
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &SentenceId> {
        self.clusters.iter().flat_map(|c| c.member_ids.iter())
    }
}

/// Good/bad ratio with a `+inf` sentinel when there are no bad counts.
pub fn raw_ratio(good: u64, bad: u64) -> f64 {
    if bad == 0 {
        f64::INFINITY
    } else {
        good as f64 / bad as f64
    }
}

/// The `+1`-smoothed selection ratio over cluster counts.
pub fn smoothed_ratio(good_clusters: u64, bad_clusters: u64) -> f64 {
    good_clusters as f64 / (bad_clusters as f64 + 1.0)
}

/// Per-candidate record within one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub n_cluster: usize,
    pub good_clusters: u64,
    pub bad_clusters: u64,
    pub good_sentences: u64,
    pub bad_sentences: u64,
    /// Sentence-count convention: good_sentences / bad_sentences.
    pub raw_ratio: f64,
    /// Cluster-count convention with the smoothing denominator.
    pub smoothed_ratio: f64,
}

impl CandidateRow {
    pub fn new(
        n_cluster: usize,
        good_clusters: u64,
        bad_clusters: u64,
        good_sentences: u64,
        bad_sentences: u64,
    ) -> Self {
        debug_assert_eq!(good_clusters + bad_clusters, n_cluster as u64);
        CandidateRow {
            n_cluster,
            good_clusters,
            bad_clusters,
            good_sentences,
            bad_sentences,
            raw_ratio: raw_ratio(good_sentences, bad_sentences),
            smoothed_ratio: smoothed_ratio(good_clusters, bad_clusters),
        }
    }
}

/// Log of one loop iteration: one row per evaluated candidate cluster count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub epoch: u32,
    pub rows: Vec<CandidateRow>,
    pub chosen_n: usize,
    /// Cumulative coherence-oracle calls up to and including this iteration.
    pub oracle_calls: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_part_label() {
        let label = parse_intent_label("inquire-promotion").unwrap();
        assert_eq!(label.action, "inquire");
        assert_eq!(label.objective, "promotion");
        let label = parse_intent_label("answer-amount").unwrap();
        assert_eq!(label.action, "answer");
        assert_eq!(label.objective, "amount");
    }

    #[test]
    fn parse_rejects_missing_hyphen() {
        assert!(matches!(
            parse_intent_label("promotion"),
            Err(LabelError::MalformedLabel(_))
        ));
    }

    #[test]
    fn parse_rejects_multiple_hyphens() {
        assert!(parse_intent_label("a-b-c").is_err());
        assert!(parse_intent_label("-").is_err());
        assert!(parse_intent_label("a-").is_err());
        assert!(parse_intent_label("-b").is_err());
        assert!(parse_intent_label("").is_err());
    }

    #[test]
    fn parse_trims_and_lowercases() {
        let label = parse_intent_label("  Inquire-Accident ").unwrap();
        assert_eq!(label.action, "inquire");
        assert_eq!(label.objective, "accident");
        assert_eq!(label.raw, "Inquire-Accident");
    }

    #[test]
    fn parse_keeps_non_ascii_verbatim() {
        let label = parse_intent_label("询问\u{2010}优惠").unwrap();
        assert_eq!(label.action, "询问");
        assert_eq!(label.objective, "优惠");
        assert_eq!(label.canonical(), "询问-优惠");
    }

    #[test]
    fn parse_serialize_round_trip_is_idempotent() {
        for raw in ["inquire-promotion", "Answer-Amount", "询问\u{2014}优惠"] {
            let once = parse_intent_label(raw).unwrap();
            let twice = parse_intent_label(&once.canonical()).unwrap();
            assert_eq!(once.action, twice.action);
            assert_eq!(once.objective, twice.objective);
            assert_eq!(once.canonical(), twice.canonical());
        }
    }

    #[test]
    fn corpus_rejects_duplicates_and_empty_text() {
        let rec = |id: &str, text: &str| SentenceRecord {
            id: SentenceId::new(id),
            text: text.to_string(),
            gold_label: None,
            gold_role: None,
        };
        assert!(Corpus::new(vec![rec("a", "x"), rec("a", "y")]).is_err());
        assert!(Corpus::new(vec![rec("a", "   ")]).is_err());
        let corpus = Corpus::new(vec![rec("a", "x"), rec("b", "y")]).unwrap();
        assert_eq!(corpus.row_of(&SentenceId::new("b")), Some(1));
    }

    #[test]
    fn cluster_sorts_and_rejects_duplicates() {
        let ids = vec![SentenceId::new("b"), SentenceId::new("a")];
        let cluster = Cluster::new(ids).unwrap();
        assert_eq!(cluster.member_ids[0].as_str(), "a");
        assert!(Cluster::new(vec![]).is_err());
        assert!(Cluster::new(vec![SentenceId::new("a"), SentenceId::new("a")]).is_err());
    }

    #[test]
    fn assignment_disjointness() {
        let c1 = Cluster::new(vec![SentenceId::new("a")]).unwrap();
        let c2 = Cluster::new(vec![SentenceId::new("a")]).unwrap();
        assert!(ClusterAssignment::new(vec![c1.clone(), c2], 0).is_err());
        let c3 = Cluster::new(vec![SentenceId::new("b")]).unwrap();
        let assignment = ClusterAssignment::new(vec![c1, c3], 0).unwrap();
        let ids = [SentenceId::new("a"), SentenceId::new("b")];
        assert!(assignment.is_partition_of(ids.iter()));
        let extra = [
            SentenceId::new("a"),
            SentenceId::new("b"),
            SentenceId::new("c"),
        ];
        assert!(!assignment.is_partition_of(extra.iter()));
    }

    #[test]
    fn ratio_sentinels() {
        assert_eq!(raw_ratio(3, 0), f64::INFINITY);
        assert!((raw_ratio(52184, 2901) - 17.988).abs() < 1e-3);
        assert!((smoothed_ratio(4, 0) - 4.0).abs() < 1e-12);
        assert!((smoothed_ratio(2, 1) - 1.0).abs() < 1e-12);
        assert!((smoothed_ratio(3, 3) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn embedding_matrix_validation() {
        assert!(EmbeddingMatrix::from_rows(vec![]).is_err());
        assert!(EmbeddingMatrix::from_rows(vec![vec![1.0]]).is_err());
        assert!(EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(EmbeddingMatrix::from_rows(vec![vec![f64::NAN, 0.0]]).is_err());
        assert!(EmbeddingMatrix::from_rows_normalized(vec![vec![3.0, 4.0]]).is_err());

        let mut m = EmbeddingMatrix::from_rows(vec![vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        m.l2_normalize();
        assert!(m.is_normalized());
        assert!((m.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((m.row(1)[1] - 1.0).abs() < 1e-12);

        let sub = m.subset(&[1]);
        assert_eq!(sub.n_rows(), 1);
        assert_eq!(sub.row(0), m.row(1));
    }
}
