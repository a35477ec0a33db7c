//! Evaluation: NMI against gold labels, goodness scores from verdicts,
//! semantic diversity and oracle accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::CoherenceVerdict;
use crate::types::{raw_ratio, ClusterAssignment, Corpus, EmbeddingMatrix, SentenceId, Verdict};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sentence {0} has no gold label")]
    MissingGoldLabel(String),
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("assignment contains an empty cluster")]
    EmptyCluster,
    #[error("unknown sentence id {0}")]
    UnknownId(String),
    #[error("no verdicts supplied")]
    NoVerdicts,
}

/// Which mean of the two entropies normalizes the mutual information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
    Min,
    Max,
}

/// Joint counts of two labelings over the same n items.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_marginals: Vec<u64>,
    col_marginals: Vec<u64>,
    n: u64,
}

impl ContingencyTable {
    /// Builds the table from parallel (row, col) index pairs.
    pub fn from_pairs(pairs: &[(usize, usize)], n_rows: usize, n_cols: usize) -> Self {
        let mut counts = vec![vec![0u64; n_cols]; n_rows];
        for &(r, c) in pairs {
            counts[r][c] += 1;
        }
        let row_marginals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
        let mut col_marginals = vec![0u64; n_cols];
        for row in &counts {
            for (m, &v) in col_marginals.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = row_marginals.iter().sum();
        ContingencyTable {
            counts,
            row_marginals,
            col_marginals,
            n,
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Entropy (nats) of the row marginal distribution.
    pub fn row_entropy(&self) -> f64 {
        entropy(&self.row_marginals, self.n)
    }

    pub fn col_entropy(&self) -> f64 {
        entropy(&self.col_marginals, self.n)
    }

    /// Mutual information (nats) between the two labelings.
    pub fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let mut mi = 0.0;
        for (r, row) in self.counts.iter().enumerate() {
            for (c, &count) in row.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let pij = count as f64 / n;
                let pi = self.row_marginals[r] as f64 / n;
                let pj = self.col_marginals[c] as f64 / n;
                mi += pij * (pij / (pi * pj)).ln();
            }
        }
        mi
    }
}

fn entropy(marginals: &[u64], n: u64) -> f64 {
    let n = n as f64;
    marginals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information between a predicted assignment and gold
/// labels, in [0, 1]. Both partitions trivial (zero entropy on both sides)
/// is 1 by convention.
pub fn nmi(
    pred: &ClusterAssignment,
    gold: &HashMap<SentenceId, String>,
    normalization: NmiNormalization,
) -> Result<f64, MetricsError> {
    let mut gold_index: HashMap<&str, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for (cluster_idx, cluster) in pred.clusters.iter().enumerate() {
        for id in &cluster.member_ids {
            let label = gold
                .get(id)
                .ok_or_else(|| MetricsError::MissingGoldLabel(id.to_string()))?;
            let next = gold_index.len();
            let gold_idx = *gold_index.entry(label.as_str()).or_insert(next);
            pairs.push((cluster_idx, gold_idx));
        }
    }
    let table = ContingencyTable::from_pairs(&pairs, pred.n_clusters(), gold_index.len());
    let (h_pred, h_gold) = (table.row_entropy(), table.col_entropy());
    if h_pred == 0.0 && h_gold == 0.0 {
        return Ok(1.0);
    }
    let denominator = match normalization {
        NmiNormalization::Arithmetic => (h_pred + h_gold) / 2.0,
        NmiNormalization::Geometric => (h_pred * h_gold).sqrt(),
        NmiNormalization::Min => h_pred.min(h_gold),
        NmiNormalization::Max => h_pred.max(h_gold),
    };
    if denominator == 0.0 {
        return Ok(0.0);
    }
    Ok((table.mutual_information() / denominator).clamp(0.0, 1.0))
}

/// good/bad verdict ratio; +inf when nothing is bad.
pub fn goodness_ratio(verdicts: &[CoherenceVerdict]) -> Result<f64, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::NoVerdicts);
    }
    let good = verdicts.iter().filter(|v| v.is_good()).count() as u64;
    Ok(raw_ratio(good, verdicts.len() as u64 - good))
}

/// Fraction of good verdicts among all verdicts.
pub fn goodness_final(verdicts: &[CoherenceVerdict]) -> Result<f64, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::NoVerdicts);
    }
    let good = verdicts.iter().filter(|v| v.is_good()).count();
    Ok(good as f64 / verdicts.len() as f64)
}

/// Mean cosine distance between each sentence and its own cluster centroid.
/// A zero-norm centroid (possible with antipodal members) contributes
/// distance 1 for each of its members.
pub fn semantic_diversity(
    embeddings: &EmbeddingMatrix,
    corpus: &Corpus,
    assignment: &ClusterAssignment,
) -> Result<f64, MetricsError> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for cluster in &assignment.clusters {
        if cluster.is_empty() {
            return Err(MetricsError::EmptyCluster);
        }
        let rows: Vec<usize> = cluster
            .member_ids
            .iter()
            .map(|id| {
                corpus
                    .row_of(id)
                    .ok_or_else(|| MetricsError::UnknownId(id.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let dim = embeddings.dim();
        let mut centroid = vec![0.0f64; dim];
        for &r in &rows {
            for (acc, v) in centroid.iter_mut().zip(embeddings.row(r)) {
                *acc += v;
            }
        }
        for v in &mut centroid {
            *v /= rows.len() as f64;
        }
        let centroid_norm = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
        for &r in &rows {
            let row = embeddings.row(r);
            let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let distance = if centroid_norm < 1e-12 || row_norm < 1e-12 {
                1.0
            } else {
                let cosine = row
                    .iter()
                    .zip(&centroid)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / (row_norm * centroid_norm);
                1.0 - cosine
            };
            total += distance;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyCluster);
    }
    Ok(total / count as f64)
}

/// Exact-match fraction between aligned predictions and references.
pub fn oracle_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64, MetricsError> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(MetricsError::LengthMismatch(pred.len(), gold.len()));
    }
    let matches = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / pred.len() as f64)
}

/// The run report exported as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub nmi: Option<f64>,
    pub nmi_normalization: NmiNormalization,
    pub goodness_final: f64,
    /// `None` encodes the +inf sentinel (all clusters good).
    pub goodness_ratio: Option<f64>,
    pub semantic_diversity: Option<f64>,
    pub n_clusters: usize,
    pub oracle_calls: crate::pipeline::CostBreakdown,
    pub probability_mode: crate::geometry::ProbabilityMode,
}

pub fn verdicts_of(assignment: &ClusterAssignment) -> Vec<CoherenceVerdict> {
    assignment
        .clusters
        .iter()
        .map(|c| {
            CoherenceVerdict::new(
                c.verdict.unwrap_or(Verdict::Bad),
                "assignment",
                String::new(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Cluster, SentenceRecord};

    fn assignment_of(groups: &[&[&str]]) -> ClusterAssignment {
        let clusters = groups
            .iter()
            .map(|g| Cluster::new(g.iter().map(|s| SentenceId::new(*s)).collect()).unwrap())
            .collect();
        ClusterAssignment::new(clusters, 0).unwrap()
    }

    fn gold_of(pairs: &[(&str, &str)]) -> HashMap<SentenceId, String> {
        pairs
            .iter()
            .map(|(id, l)| (SentenceId::new(*id), l.to_string()))
            .collect()
    }

    #[test]
    fn nmi_perfect_match_is_one() {
        let pred = assignment_of(&[&["a", "b"], &["c", "d"]]);
        let gold = gold_of(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        let v = nmi(&pred, &gold, NmiNormalization::Arithmetic).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_single_cluster_is_zero() {
        let pred = assignment_of(&[&["a", "b", "c", "d"]]);
        let gold = gold_of(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        let v = nmi(&pred, &gold, NmiNormalization::Arithmetic).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn nmi_independent_partitions_are_zero() {
        // {a,b},{c,d} vs {a,c},{b,d}: the contingency table is uniform.
        let pred = assignment_of(&[&["a", "b"], &["c", "d"]]);
        let gold = gold_of(&[("a", "x"), ("b", "y"), ("c", "x"), ("d", "y")]);
        let v = nmi(&pred, &gold, NmiNormalization::Arithmetic).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn nmi_missing_gold_label_errors() {
        let pred = assignment_of(&[&["a", "b"]]);
        let gold = gold_of(&[("a", "x")]);
        assert!(matches!(
            nmi(&pred, &gold, NmiNormalization::Arithmetic),
            Err(MetricsError::MissingGoldLabel(_))
        ));
    }

    #[test]
    fn nmi_is_symmetric_and_relabel_invariant() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(5..60);
            let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let k1 = rng.gen_range(1..6);
            let k2 = rng.gen_range(1..6);
            let part1: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k1)).collect();
            let part2: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k2)).collect();

            let build = |part: &[usize], k: usize| -> ClusterAssignment {
                let mut groups: Vec<Vec<SentenceId>> = vec![Vec::new(); k];
                for (i, &g) in part.iter().enumerate() {
                    groups[g].push(SentenceId::new(ids[i].clone()));
                }
                let clusters: Vec<Cluster> = groups
                    .into_iter()
                    .filter(|g| !g.is_empty())
                    .map(|g| Cluster::new(g).unwrap())
                    .collect();
                ClusterAssignment::new(clusters, 0).unwrap()
            };
            let labels = |part: &[usize]| -> HashMap<SentenceId, String> {
                part.iter()
                    .enumerate()
                    .map(|(i, &g)| (SentenceId::new(ids[i].clone()), format!("g{g}")))
                    .collect()
            };

            let ab = nmi(&build(&part1, k1), &labels(&part2), NmiNormalization::Arithmetic)
                .unwrap();
            let ba = nmi(&build(&part2, k2), &labels(&part1), NmiNormalization::Arithmetic)
                .unwrap();
            assert!((ab - ba).abs() < 1e-12);

            // Renaming gold labels must not change the score.
            let renamed: HashMap<SentenceId, String> = labels(&part2)
                .into_iter()
                .map(|(id, l)| (id, format!("renamed-{l}")))
                .collect();
            let ab2 = nmi(&build(&part1, k1), &renamed, NmiNormalization::Arithmetic).unwrap();
            assert!((ab - ab2).abs() < 1e-12);
        }
    }

    #[test]
    fn goodness_scores() {
        let v = |value| CoherenceVerdict::new(value, "t", "");
        let verdicts = vec![v(Verdict::Good), v(Verdict::Good), v(Verdict::Bad)];
        assert!((goodness_ratio(&verdicts).unwrap() - 2.0).abs() < 1e-12);
        assert!((goodness_final(&verdicts).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let all_good = vec![v(Verdict::Good); 4];
        assert_eq!(goodness_ratio(&all_good).unwrap(), f64::INFINITY);
        assert_eq!(goodness_final(&all_good).unwrap(), 1.0);

        let all_bad = vec![v(Verdict::Bad); 4];
        assert_eq!(goodness_ratio(&all_bad).unwrap(), 0.0);
        assert_eq!(goodness_final(&all_bad).unwrap(), 0.0);

        // Eight good of ten.
        let mixed: Vec<CoherenceVerdict> = (0..10)
            .map(|i| v(if i < 8 { Verdict::Good } else { Verdict::Bad }))
            .collect();
        assert!((goodness_final(&mixed).unwrap() - 0.8).abs() < 1e-12);

        // ratio = final / (1 - final) when 0 < final < 1.
        let f = goodness_final(&mixed).unwrap();
        let r = goodness_ratio(&mixed).unwrap();
        assert!((r - f / (1.0 - f)).abs() < 1e-9);

        assert!(goodness_ratio(&[]).is_err());
    }

    #[test]
    fn goodness_ratio_sentence_counts_match_logged_convention() {
        assert!((raw_ratio(52184, 2901) - 17.988).abs() <= 0.001);
    }

    fn fixture(rows: Vec<Vec<f64>>) -> (Corpus, EmbeddingMatrix) {
        let records = (0..rows.len())
            .map(|i| SentenceRecord {
                id: SentenceId::new(format!("s{i}")),
                text: format!("t{i}"),
                gold_label: None,
                gold_role: None,
            })
            .collect();
        (
            Corpus::new(records).unwrap(),
            EmbeddingMatrix::from_rows(rows).unwrap(),
        )
    }

    #[test]
    fn semantic_diversity_examples() {
        // All identical vectors: zero diversity.
        let (corpus, m) = fixture(vec![vec![1.0, 0.0]; 4]);
        let a = assignment_of(&[&["s0", "s1"], &["s2", "s3"]]);
        assert_eq!(semantic_diversity(&m, &corpus, &a).unwrap(), 0.0);

        // Singleton clusters: each point is its centroid.
        let (corpus, m) = fixture(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let a = assignment_of(&[&["s0"], &["s1"]]);
        assert!(semantic_diversity(&m, &corpus, &a).unwrap().abs() < 1e-12);

        // Antipodal pair: zero-norm centroid, distance defined as 1.
        let (corpus, m) = fixture(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let a = assignment_of(&[&["s0", "s1"]]);
        assert_eq!(semantic_diversity(&m, &corpus, &a).unwrap(), 1.0);
    }

    #[test]
    fn semantic_diversity_rotation_invariance() {
        let rows = vec![
            vec![1.0, 0.2],
            vec![0.8, 0.5],
            vec![0.2, 1.1],
            vec![-0.3, 0.9],
        ];
        let angle = 0.7f64;
        let rotated: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                vec![
                    angle.cos() * r[0] - angle.sin() * r[1],
                    angle.sin() * r[0] + angle.cos() * r[1],
                ]
            })
            .collect();
        let (corpus, m1) = fixture(rows);
        let (_, m2) = fixture(rotated);
        let a = assignment_of(&[&["s0", "s1"], &["s2", "s3"]]);
        let d1 = semantic_diversity(&m1, &corpus, &a).unwrap();
        let d2 = semantic_diversity(&m2, &corpus, &a).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(d1 > 0.0);
    }

    #[test]
    fn oracle_accuracy_examples() {
        let a = vec![1, 2, 3, 4];
        assert_eq!(oracle_accuracy(&a, &a).unwrap(), 1.0);
        let b = vec![1, 2, 0, 0];
        assert_eq!(oracle_accuracy(&a, &b).unwrap(), 0.5);
        let short = vec![1];
        assert!(matches!(
            oracle_accuracy(&a, &short),
            Err(MetricsError::LengthMismatch(4, 1))
        ));
        let empty: Vec<i32> = vec![];
        assert!(oracle_accuracy(&empty, &empty).is_err());
    }

    /// Accuracy of the noisy oracle over many distinct clusters
    /// concentrates at 1 - flip_rate.
    #[test]
    fn noisy_oracle_accuracy_matches_binomial_expectation() {
        use crate::oracle::{NoisyReferenceOracle, Oracle, ReferenceOracle};
        let gold: HashMap<String, String> =
            [("t".to_string(), "x-y".to_string())].into_iter().collect();
        let noisy = NoisyReferenceOracle::new(ReferenceOracle::new(gold, 1.0), 0.05, 77);
        let n = 10_000;
        // Each trial is a distinct impure cluster, so the clean verdict is
        // Bad and the flip decisions are independent across trials.
        let truth: Vec<Verdict> = vec![Verdict::Bad; n];
        let measured: Vec<Verdict> = (0..n)
            .map(|i| {
                let input = vec!["t".to_string(), format!("probe {i}")];
                noisy.evaluate_coherence(&input).unwrap().value
            })
            .collect();
        let accuracy = oracle_accuracy(&measured, &truth).unwrap();
        assert!((accuracy - 0.95).abs() <= 0.01, "accuracy = {accuracy}");
    }
}
