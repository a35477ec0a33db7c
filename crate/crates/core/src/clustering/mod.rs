//! Conventional clustering functions used inside the loop: seeded k-means
//! and agglomerative hierarchical clustering over embedding rows.

mod hierarchical;
mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Cluster, ClusterAssignment, Corpus, EmbeddingMatrix, SentenceId};

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("empty input")]
    EmptyInput,
    #[error("requested {k} clusters from {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("{0} ids supplied for {1} embedding rows")]
    IdRowMismatch(usize, usize),
    #[error("unknown sentence id {0}")]
    UnknownId(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringAlgorithm {
    #[serde(rename = "kmeans")]
    KMeans,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Complete,
}

/// Parameters for one clustering run. `linkage` applies to hierarchical
/// only; `max_iter` and `tol` to k-means only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSpec {
    pub algorithm: ClusteringAlgorithm,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    300
}

fn default_tol() -> f64 {
    1e-6
}

impl ClusteringSpec {
    pub fn kmeans(k: usize, seed: u64) -> Self {
        ClusteringSpec {
            algorithm: ClusteringAlgorithm::KMeans,
            k,
            seed,
            linkage: Linkage::Ward,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn hierarchical(k: usize, linkage: Linkage) -> Self {
        ClusteringSpec {
            algorithm: ClusteringAlgorithm::Hierarchical,
            k,
            seed: 0,
            linkage,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, n: usize) -> Result<(), ClusteringError> {
        if n == 0 {
            return Err(ClusteringError::EmptyInput);
        }
        if self.k == 0 {
            return Err(ClusteringError::InvalidParameter("k must be >= 1".into()));
        }
        if self.k > n {
            return Err(ClusteringError::TooFewPoints { k: self.k, n });
        }
        if self.max_iter == 0 {
            return Err(ClusteringError::InvalidParameter(
                "max_iter must be >= 1".into(),
            ));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(ClusteringError::InvalidParameter(
                "tol must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Assigns every embedding row to one of exactly `k` clusters.
///
/// Returns per-row cluster labels in `0..k`, renumbered by first occurrence
/// so identical inputs yield identical labelings.
pub fn cluster_rows(
    embeddings: &EmbeddingMatrix,
    spec: &ClusteringSpec,
) -> Result<Vec<usize>, ClusteringError> {
    spec.validate(embeddings.n_rows())?;
    let labels = match spec.algorithm {
        ClusteringAlgorithm::KMeans => kmeans::run(embeddings, spec),
        ClusteringAlgorithm::Hierarchical => hierarchical::run(embeddings, spec),
    };
    Ok(renumber_by_first_occurrence(labels, spec.k))
}

/// Clusters rows and materializes a [`ClusterAssignment`] over the sentence
/// ids labeling those rows (`ids[i]` labels row `i`).
pub fn cluster(
    embeddings: &EmbeddingMatrix,
    ids: &[SentenceId],
    spec: &ClusteringSpec,
) -> Result<ClusterAssignment, ClusteringError> {
    if ids.len() != embeddings.n_rows() {
        return Err(ClusteringError::IdRowMismatch(
            ids.len(),
            embeddings.n_rows(),
        ));
    }
    let labels = cluster_rows(embeddings, spec)?;
    let mut members: Vec<Vec<SentenceId>> = vec![Vec::new(); spec.k];
    for (row, &label) in labels.iter().enumerate() {
        members[label].push(ids[row].clone());
    }
    let clusters: Vec<Cluster> = members
        .into_iter()
        .map(|ids| Cluster::new(ids).expect("clustering produced an empty or duplicated cluster"))
        .collect();
    Ok(ClusterAssignment::new(clusters, 0)
        .expect("clustering produced overlapping clusters"))
}

/// Arithmetic mean of a cluster's member rows.
pub fn centroid(
    embeddings: &EmbeddingMatrix,
    corpus: &Corpus,
    cluster: &Cluster,
) -> Result<Vec<f64>, ClusteringError> {
    let mut sum = vec![0.0; embeddings.dim()];
    for id in &cluster.member_ids {
        let row = corpus
            .row_of(id)
            .ok_or_else(|| ClusteringError::UnknownId(id.to_string()))?;
        for (acc, v) in sum.iter_mut().zip(embeddings.row(row)) {
            *acc += v;
        }
    }
    let n = cluster.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    Ok(sum)
}

fn renumber_by_first_occurrence(labels: Vec<usize>, k: usize) -> Vec<usize> {
    let mut mapping = vec![usize::MAX; k];
    let mut next = 0usize;
    labels
        .into_iter()
        .map(|l| {
            if mapping[l] == usize::MAX {
                mapping[l] = next;
                next += 1;
            }
            mapping[l]
        })
        .collect()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn ids(n: usize) -> Vec<SentenceId> {
        (0..n).map(|i| SentenceId::new(format!("s{i:04}"))).collect()
    }

    /// Two Gaussian blobs with centers 10 sigma apart.
    fn two_blobs(seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = 0.5;
        let centers = [[0.0, 0.0], [5.0, 0.0]];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (b, center) in centers.iter().enumerate() {
            for _ in 0..20 {
                let gauss = |rng: &mut ChaCha8Rng| {
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                };
                rows.push(vec![
                    center[0] + sigma * gauss(&mut rng),
                    center[1] + sigma * gauss(&mut rng),
                ]);
                truth.push(b);
            }
        }
        (matrix(rows), truth)
    }

    fn specs_under_test(k: usize) -> Vec<ClusteringSpec> {
        vec![
            ClusteringSpec::kmeans(k, 7),
            ClusteringSpec::hierarchical(k, Linkage::Ward),
            ClusteringSpec::hierarchical(k, Linkage::Average),
            ClusteringSpec::hierarchical(k, Linkage::Complete),
        ]
    }

    #[test]
    fn k_equals_one_yields_single_cluster() {
        let m = matrix(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.5]]);
        for spec in specs_under_test(1) {
            let assignment = cluster(&m, &ids(3), &spec).unwrap();
            assert_eq!(assignment.n_clusters(), 1);
            assert_eq!(assignment.clusters[0].len(), 3);
        }
    }

    #[test]
    fn k_equals_n_yields_singletons() {
        let m = matrix(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.5]]);
        for spec in specs_under_test(3) {
            let assignment = cluster(&m, &ids(3), &spec).unwrap();
            assert_eq!(assignment.n_clusters(), 3);
            assert!(assignment.clusters.iter().all(|c| c.len() == 1));
        }
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (m, truth) = two_blobs(11);
        // Brute-force check of the construction: every point is nearer its
        // own blob center than the other.
        let centers = [[0.0, 0.0], [5.0, 0.0]];
        for (row, &blob) in truth.iter().enumerate() {
            let own = squared_distance(m.row(row), &centers[blob]);
            let other = squared_distance(m.row(row), &centers[1 - blob]);
            assert!(own < other, "blob construction is not separable");
        }
        for spec in specs_under_test(2) {
            let labels = cluster_rows(&m, &spec).unwrap();
            // Same partition as blob membership (up to label swap).
            let first = labels[0];
            for (row, &label) in labels.iter().enumerate() {
                let expected = if truth[row] == truth[0] { first } else { 1 - first };
                assert_eq!(label, expected, "algorithm {:?}", spec.algorithm);
            }
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let (m, _) = two_blobs(13);
        for spec in specs_under_test(5) {
            let a = cluster_rows(&m, &spec).unwrap();
            let b = cluster_rows(&m, &spec).unwrap();
            assert_eq!(a, b);
        }
        // Different k-means seeds are allowed to differ, but each must be
        // internally stable.
        let s1 = ClusteringSpec::kmeans(4, 1);
        let s2 = ClusteringSpec::kmeans(4, 1);
        assert_eq!(cluster_rows(&m, &s1).unwrap(), cluster_rows(&m, &s2).unwrap());
    }

    #[test]
    fn output_is_a_partition_with_exactly_k_blocks() {
        let (m, _) = two_blobs(17);
        let sentence_ids = ids(m.n_rows());
        for k in [1, 2, 7, 40] {
            for spec in specs_under_test(k) {
                let assignment = cluster(&m, &sentence_ids, &spec).unwrap();
                assert_eq!(assignment.n_clusters(), k);
                assert!(assignment.clusters.iter().all(|c| !c.is_empty()));
                assert!(assignment.is_partition_of(sentence_ids.iter()));
            }
        }
    }

    #[test]
    fn kmeans_objective_is_non_increasing() {
        let (m, _) = two_blobs(19);
        let objective = |labels: &[usize], k: usize| -> f64 {
            let mut sums = vec![vec![0.0; m.dim()]; k];
            let mut counts = vec![0usize; k];
            for (row, &l) in labels.iter().enumerate() {
                counts[l] += 1;
                for (acc, v) in sums[l].iter_mut().zip(m.row(row)) {
                    *acc += v;
                }
            }
            for (sum, &c) in sums.iter_mut().zip(&counts) {
                for v in sum.iter_mut() {
                    *v /= c.max(1) as f64;
                }
            }
            labels
                .iter()
                .enumerate()
                .map(|(row, &l)| squared_distance(m.row(row), &sums[l]))
                .sum()
        };
        let mut prev = f64::INFINITY;
        for iters in 1..=8 {
            let mut spec = ClusteringSpec::kmeans(4, 3);
            spec.max_iter = iters;
            spec.tol = 0.0;
            let labels = cluster_rows(&m, &spec).unwrap();
            let obj = objective(&labels, 4);
            assert!(obj <= prev + 1e-9, "objective rose: {obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn kmeans_repairs_empty_clusters() {
        // Duplicated points force centroid collisions; the repair must still
        // return exactly k non-empty clusters.
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![10.0, 10.0],
            vec![10.0, 10.1],
        ];
        let m = matrix(rows);
        for seed in 0..20 {
            let spec = ClusteringSpec::kmeans(3, seed);
            let labels = cluster_rows(&m, &spec).unwrap();
            let mut counts = [0usize; 3];
            for &l in &labels {
                counts[l] += 1;
            }
            assert!(counts.iter().all(|&c| c > 0), "seed {seed}: {counts:?}");
        }
    }

    #[test]
    fn ward_on_sorted_line_never_interleaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = rng.gen_range(6..30);
            let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let m = matrix(xs.iter().map(|&x| vec![x, 0.0]).collect());
            let k = rng.gen_range(1..=xs.len().min(5));
            let spec = ClusteringSpec::hierarchical(k, Linkage::Ward);
            let labels = cluster_rows(&m, &spec).unwrap();
            // Clusters over sorted points must be contiguous runs.
            for w in labels.windows(2) {
                if w[0] != w[1] {
                    // Once a label ends it may never reappear.
                    continue;
                }
            }
            let mut seen_closed: Vec<usize> = Vec::new();
            let mut current = labels[0];
            for &l in &labels[1..] {
                if l != current {
                    assert!(!seen_closed.contains(&l), "interleaved clusters: {labels:?}");
                    seen_closed.push(current);
                    current = l;
                }
            }
        }
    }

    #[test]
    fn error_cases() {
        let m = matrix(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let spec = ClusteringSpec::kmeans(3, 0);
        assert!(matches!(
            cluster_rows(&m, &spec),
            Err(ClusteringError::TooFewPoints { k: 3, n: 2 })
        ));
        let spec = ClusteringSpec::kmeans(1, 0);
        assert!(matches!(
            cluster(&m, &ids(3), &spec),
            Err(ClusteringError::IdRowMismatch(3, 2))
        ));
    }

    #[test]
    fn centroid_examples() {
        use crate::types::SentenceRecord;
        let records: Vec<SentenceRecord> = (0..3)
            .map(|i| SentenceRecord {
                id: SentenceId::new(format!("s{i}")),
                text: format!("t{i}"),
                gold_label: None,
                gold_role: None,
            })
            .collect();
        let corpus = Corpus::new(records).unwrap();
        let m = matrix(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![-2.0, 0.0]]);

        let single = Cluster::new(vec![SentenceId::new("s1")]).unwrap();
        assert_eq!(centroid(&m, &corpus, &single).unwrap(), vec![2.0, 0.0]);

        let pair = Cluster::new(vec![SentenceId::new("s0"), SentenceId::new("s1")]).unwrap();
        assert_eq!(centroid(&m, &corpus, &pair).unwrap(), vec![1.0, 0.0]);

        let symmetric = Cluster::new(vec![SentenceId::new("s1"), SentenceId::new("s2")]).unwrap();
        let c = centroid(&m, &corpus, &symmetric).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));

        let unknown = Cluster::new(vec![SentenceId::new("nope")]).unwrap();
        assert!(matches!(
            centroid(&m, &corpus, &unknown),
            Err(ClusteringError::UnknownId(_))
        ));
    }
}
