//! Representative-sentence selection: at most `sample_size` members per
//! cluster, chosen at random or by convex-hull coverage of a
//! principal-component projection.

mod hull;
mod pca;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Cluster, Corpus, EmbeddingMatrix, SentenceId};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("unknown sentence id {0}")]
    UnknownId(String),
    #[error("invalid sampling spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Random,
    #[default]
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    #[serde(default)]
    pub method: SamplingMethod,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions_t: usize,
    #[serde(default = "default_hull_dim")]
    pub hull_dim_d: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_sample_size() -> usize {
    20
}

fn default_repetitions() -> usize {
    1
}

fn default_hull_dim() -> usize {
    2
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            method: SamplingMethod::Convex,
            sample_size: default_sample_size(),
            repetitions_t: default_repetitions(),
            hull_dim_d: default_hull_dim(),
            seed: 0,
        }
    }
}

impl SamplingSpec {
    pub fn random(sample_size: usize, seed: u64) -> Self {
        SamplingSpec {
            method: SamplingMethod::Random,
            sample_size,
            seed,
            ..Default::default()
        }
    }

    pub fn convex(sample_size: usize, hull_dim_d: usize, seed: u64) -> Self {
        SamplingSpec {
            method: SamplingMethod::Convex,
            sample_size,
            hull_dim_d,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self, embedding_dim: usize) -> Result<(), SamplingError> {
        if self.sample_size == 0 {
            return Err(SamplingError::InvalidSpec("sample_size must be >= 1".into()));
        }
        if self.repetitions_t == 0 {
            return Err(SamplingError::InvalidSpec(
                "repetitions_t must be >= 1".into(),
            ));
        }
        if self.method == SamplingMethod::Convex
            && (self.hull_dim_d < 2 || self.hull_dim_d > embedding_dim)
        {
            return Err(SamplingError::InvalidSpec(format!(
                "hull_dim_d must be in 2..={embedding_dim}, got {}",
                self.hull_dim_d
            )));
        }
        Ok(())
    }
}

/// Selects up to `sample_size` member ids. Output ids are sorted.
///
/// Clusters at or below the sample size are returned whole. Random sampling
/// draws without replacement. Convex sampling projects members onto
/// `hull_dim_d` principal components, keeps every hull vertex of the
/// projection, and fills remaining slots with seeded random interior
/// members; if there are more vertices than slots it keeps the
/// `sample_size` most spread vertices (greedy farthest-point, seeded at the
/// vertex farthest from the projected centroid).
pub fn sample_cluster(
    embeddings: &EmbeddingMatrix,
    corpus: &Corpus,
    cluster: &Cluster,
    spec: &SamplingSpec,
) -> Result<Vec<SentenceId>, SamplingError> {
    spec.validate(embeddings.dim())?;
    let members = &cluster.member_ids;
    if members.len() <= spec.sample_size {
        return Ok(members.clone());
    }

    let selected_indices = match spec.method {
        SamplingMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut indices: Vec<usize> = (0..members.len()).collect();
            indices.shuffle(&mut rng);
            indices.truncate(spec.sample_size);
            indices
        }
        SamplingMethod::Convex => {
            let rows: Vec<&[f64]> = members
                .iter()
                .map(|id| {
                    corpus
                        .row_of(id)
                        .map(|r| embeddings.row(r))
                        .ok_or_else(|| SamplingError::UnknownId(id.to_string()))
                })
                .collect::<Result<_, _>>()?;
            let projected = pca::project(&rows, spec.hull_dim_d);
            let vertices = hull::hull_vertices(&projected);

            if vertices.len() > spec.sample_size {
                farthest_point_selection(&projected, &vertices, spec.sample_size)
            } else {
                let mut selected = vertices.clone();
                let mut interior: Vec<usize> =
                    (0..members.len()).filter(|i| !vertices.contains(i)).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                interior.shuffle(&mut rng);
                selected.extend(interior.into_iter().take(spec.sample_size - vertices.len()));
                selected
            }
        }
    };

    let mut ids: Vec<SentenceId> = selected_indices
        .into_iter()
        .map(|i| members[i].clone())
        .collect();
    ids.sort();
    Ok(ids)
}

/// `t` independent samples seeded `seed, seed+1, ...`. Convex samples differ
/// only in the random fill portion.
pub fn repeated_samples(
    embeddings: &EmbeddingMatrix,
    corpus: &Corpus,
    cluster: &Cluster,
    spec: &SamplingSpec,
) -> Result<Vec<Vec<SentenceId>>, SamplingError> {
    (0..spec.repetitions_t as u64)
        .map(|rep| {
            let rep_spec = SamplingSpec {
                seed: spec.seed.wrapping_add(rep),
                ..*spec
            };
            sample_cluster(embeddings, corpus, cluster, &rep_spec)
        })
        .collect()
}

/// Greedy max-min spread over the hull vertices, in projected space.
fn farthest_point_selection(
    projected: &[Vec<f64>],
    vertices: &[usize],
    count: usize,
) -> Vec<usize> {
    let dim = projected[0].len();
    let mut centroid = vec![0.0f64; dim];
    for p in projected {
        for (acc, v) in centroid.iter_mut().zip(p) {
            *acc += v;
        }
    }
    for v in &mut centroid {
        *v /= projected.len() as f64;
    }
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let start = *vertices
        .iter()
        .max_by(|&&a, &&b| {
            d2(&projected[a], &centroid)
                .partial_cmp(&d2(&projected[b], &centroid))
                .unwrap()
                .then(b.cmp(&a))
        })
        .expect("vertex set is non-empty");

    let mut selected = vec![start];
    let mut min_dist: Vec<(usize, f64)> = vertices
        .iter()
        .filter(|&&v| v != start)
        .map(|&v| (v, d2(&projected[v], &projected[start])))
        .collect();
    while selected.len() < count && !min_dist.is_empty() {
        let (pos, _) = min_dist
            .iter()
            .enumerate()
            .max_by(|(_, (va, da)), (_, (vb, db))| {
                da.partial_cmp(db).unwrap().then(vb.cmp(va))
            })
            .unwrap();
        let (vertex, _) = min_dist.swap_remove(pos);
        selected.push(vertex);
        for (v, d) in &mut min_dist {
            let nd = d2(&projected[*v], &projected[vertex]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    selected
}
