//! Agglomerative clustering via the nearest-neighbor chain algorithm with
//! Lance-Williams updates (ward, average, complete), cut at k clusters.

use super::{squared_distance, ClusteringSpec, Linkage};
use crate::types::EmbeddingMatrix;

struct Merge {
    rep_a: usize,
    rep_b: usize,
    height: f64,
    order: usize,
}

pub(super) fn run(embeddings: &EmbeddingMatrix, spec: &ClusteringSpec) -> Vec<usize> {
    let n = embeddings.n_rows();
    if spec.k == n {
        return (0..n).collect();
    }

    // Condensed pairwise distances. Ward operates on squared Euclidean
    // distances; average and complete on plain Euclidean.
    let squared = spec.linkage == Linkage::Ward;
    let mut dist = vec![0.0f64; n * (n - 1) / 2];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = squared_distance(embeddings.row(i), embeddings.row(j));
            dist[condensed_index(n, i, j)] = if squared { d2 } else { d2.sqrt() };
        }
    }

    let merges = nn_chain(n, &mut dist, spec.linkage);
    cut(n, spec.k, merges)
}

fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

fn nn_chain(n: usize, dist: &mut [f64], linkage: Linkage) -> Vec<Merge> {
    let mut active = vec![true; n];
    let mut size = vec![1.0f64; n];
    let mut merges = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    let d = |dist: &[f64], a: usize, b: usize| -> f64 {
        dist[condensed_index(n, a.min(b), a.max(b))]
    };

    for step in 0..n - 1 {
        if chain.is_empty() {
            let start = active
                .iter()
                .position(|&a| a)
                .expect("no active cluster left");
            chain.push(start);
        }
        let (a, b) = loop {
            let tail = *chain.last().unwrap();
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            // Nearest active neighbor, preferring the chain predecessor on
            // ties so reciprocal pairs terminate deterministically.
            let mut nearest = prev;
            let mut nearest_d = prev.map(|p| d(dist, tail, p)).unwrap_or(f64::INFINITY);
            for (c, &is_active) in active.iter().enumerate() {
                if c == tail || !is_active || Some(c) == prev {
                    continue;
                }
                let dc = d(dist, tail, c);
                if dc < nearest_d {
                    nearest_d = dc;
                    nearest = Some(c);
                }
            }
            let next = nearest.expect("active cluster must have a neighbor");
            if Some(next) == prev {
                chain.pop();
                chain.pop();
                break (tail.min(next), tail.max(next));
            }
            chain.push(next);
        };

        let height_raw = d(dist, a, b);
        let height = if linkage == Linkage::Ward {
            height_raw.max(0.0).sqrt()
        } else {
            height_raw
        };
        merges.push(Merge {
            rep_a: a,
            rep_b: b,
            height,
            order: step,
        });

        // Merge b into a: update a's distances, deactivate b.
        let (sa, sb) = (size[a], size[b]);
        for c in 0..n {
            if c == a || c == b || !active[c] {
                continue;
            }
            let dac = d(dist, a, c);
            let dbc = d(dist, b, c);
            let updated = match linkage {
                Linkage::Ward => {
                    let sc = size[c];
                    ((sa + sc) * dac + (sb + sc) * dbc - sc * height_raw) / (sa + sb + sc)
                }
                Linkage::Average => (sa * dac + sb * dbc) / (sa + sb),
                Linkage::Complete => dac.max(dbc),
            };
            dist[condensed_index(n, a.min(c), a.max(c))] = updated;
        }
        active[b] = false;
        size[a] = sa + sb;
    }
    merges
}

/// Cuts the dendrogram at k clusters by applying the n-k cheapest merges.
fn cut(n: usize, k: usize, mut merges: Vec<Merge>) -> Vec<usize> {
    merges.sort_by(|x, y| {
        x.height
            .partial_cmp(&y.height)
            .unwrap()
            .then(x.order.cmp(&y.order))
    });

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for merge in merges.iter().take(n - k) {
        let ra = find(&mut parent, merge.rep_a);
        let rb = find(&mut parent, merge.rep_b);
        debug_assert_ne!(ra, rb, "dendrogram merge joins an already-joined pair");
        let (hi, lo) = (ra.max(rb), ra.min(rb));
        parent[hi] = lo;
    }

    let mut labels = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut root_label = vec![usize::MAX; n];
    for (i, label) in labels.iter_mut().enumerate() {
        let root = find(&mut parent, i);
        if root_label[root] == usize::MAX {
            root_label[root] = next;
            next += 1;
        }
        *label = root_label[root];
    }
    debug_assert_eq!(next, k);
    labels
}
