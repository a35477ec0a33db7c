//! Lloyd's algorithm with k-means++ seeding and empty-cluster repair.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{squared_distance, ClusteringSpec};
use crate::types::EmbeddingMatrix;

pub(super) fn run(embeddings: &EmbeddingMatrix, spec: &ClusteringSpec) -> Vec<usize> {
    let n = embeddings.n_rows();
    let dim = embeddings.dim();
    let k = spec.k;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centroids = plus_plus_init(embeddings, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut distances = vec![0.0f64; n];

    for _ in 0..spec.max_iter {
        assign(embeddings, &centroids, &mut labels, &mut distances);
        repair_empty_clusters(k, &mut labels, &distances);

        // Recompute centroids; track the largest shift for the stop rule.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (row, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            for (acc, v) in sums[label * dim..(label + 1) * dim]
                .iter_mut()
                .zip(embeddings.row(row))
            {
                *acc += v;
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            debug_assert!(counts[c] > 0, "empty cluster survived repair");
            let inv = 1.0 / counts[c] as f64;
            let new_centroid: Vec<f64> =
                sums[c * dim..(c + 1) * dim].iter().map(|v| v * inv).collect();
            max_shift = max_shift.max(squared_distance(&new_centroid, &centroids[c]).sqrt());
            centroids[c] = new_centroid;
        }
        if max_shift <= spec.tol {
            break;
        }
    }
    assign(embeddings, &centroids, &mut labels, &mut distances);
    repair_empty_clusters(k, &mut labels, &distances);
    labels
}

/// k-means++: each subsequent centroid is drawn with probability
/// proportional to the squared distance from the nearest chosen centroid.
fn plus_plus_init(embeddings: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = embeddings.n_rows();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(embeddings.row(first).to_vec());

    let mut best: Vec<f64> = (0..n)
        .map(|row| squared_distance(embeddings.row(row), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = best.iter().sum();
        let chosen = if total <= 0.0 {
            // All remaining points coincide with a centroid; fall back to a
            // uniform draw so we still produce k centroids.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (row, &w) in best.iter().enumerate() {
                if target < w {
                    idx = row;
                    break;
                }
                target -= w;
            }
            idx
        };
        let centroid = embeddings.row(chosen).to_vec();
        for (row, b) in best.iter_mut().enumerate() {
            let d = squared_distance(embeddings.row(row), &centroid);
            if d < *b {
                *b = d;
            }
        }
        centroids.push(centroid);
    }
    centroids
}

fn assign(
    embeddings: &EmbeddingMatrix,
    centroids: &[Vec<f64>],
    labels: &mut [usize],
    distances: &mut [f64],
) {
    for row in 0..embeddings.n_rows() {
        let point = embeddings.row(row);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = squared_distance(point, centroid);
            // Strict inequality breaks ties toward the lowest index.
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[row] = best;
        distances[row] = best_d;
    }
}

/// Re-seeds each empty cluster at the point farthest from its current
/// centroid, excluding points that are alone in their cluster.
fn repair_empty_clusters(k: usize, labels: &mut [usize], distances: &[f64]) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut farthest: Option<usize> = None;
        for (row, &d) in distances.iter().enumerate() {
            if counts[labels[row]] <= 1 {
                continue;
            }
            match farthest {
                Some(best) if distances[best] >= d => {}
                _ => farthest = Some(row),
            }
        }
        if let Some(row) = farthest {
            counts[labels[row]] -= 1;
            labels[row] = empty;
            counts[empty] = 1;
        }
    }
}
