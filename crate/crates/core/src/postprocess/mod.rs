//! Post-correction: label-driven cluster merging over a semantic affinity
//! graph, and role separation with per-role re-clustering.

mod union_find;

pub use union_find::UnionFind;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    geodesic_distance, same_intent_probability, GeometryError, ProbabilityMode, UnitVector,
    VmfParams,
};
use crate::pipeline::{run_pipeline, LoopConfig, PipelineDeps, PipelineError, PipelineOutcome};
use crate::seed::derive_seed;
use crate::types::{Cluster, ClusterAssignment, Corpus, EmbeddingMatrix, Role, SentenceId};

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("edge ({0}, {1}) out of range for {2} vertices")]
    IndexOutOfRange(usize, usize, usize),
    #[error("graph has {0} vertices but the assignment has {1} clusters")]
    VertexCountMismatch(usize, usize),
    #[error("cluster {0} has no intent label")]
    MissingLabel(usize),
    #[error("role lexicon not disjoint: action {0:?} appears on both sides")]
    LexiconOverlap(String),
    #[error("failed to load lexicon {path}: {reason}")]
    LexiconLoad { path: String, reason: String },
}

/// Thresholds for the merge gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Geodesic edge threshold (radians).
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Same-intent probability gate.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub probability_mode: ProbabilityMode,
}

fn default_theta() -> f64 {
    0.8
}

fn default_tau() -> f64 {
    0.7
}

fn default_kappa() -> f64 {
    64.0
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            theta: default_theta(),
            tau: default_tau(),
            kappa: default_kappa(),
            probability_mode: ProbabilityMode::Posterior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityEdge {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub probability: f64,
}

/// Graph over cluster indices; an edge means "probably the same intent".
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub n_vertices: usize,
    pub edges: Vec<AffinityEdge>,
}

/// Builds the affinity graph over label embeddings: an edge (i, j) exists
/// iff the geodesic distance is below `theta` and the same-intent
/// probability (mixture means = all current labels, uniform weights)
/// exceeds `tau`.
pub fn build_affinity_graph(
    label_embeddings: &[UnitVector],
    config: &MergeConfig,
) -> Result<AffinityGraph, PostprocessError> {
    let n = label_embeddings.len();
    let mut edges = Vec::new();
    if n > 0 {
        let params = VmfParams::new(config.kappa, label_embeddings[0].dim())?;
        for i in 0..n {
            for j in (i + 1)..n {
                let distance = geodesic_distance(&label_embeddings[i], &label_embeddings[j])?;
                if distance >= config.theta {
                    continue;
                }
                let probability = same_intent_probability(
                    &label_embeddings[i],
                    &label_embeddings[j],
                    label_embeddings,
                    params,
                    config.probability_mode,
                )?;
                if probability > config.tau {
                    edges.push(AffinityEdge {
                        i,
                        j,
                        distance,
                        probability,
                    });
                }
            }
        }
    }
    Ok(AffinityGraph {
        n_vertices: n,
        edges,
    })
}

/// Unions clusters connected in the affinity graph. Merged clusters have
/// their label slot cleared for re-naming; attributes survive only when
/// every constituent agrees.
pub fn merge_clusters(
    assignment: &ClusterAssignment,
    graph: &AffinityGraph,
) -> Result<ClusterAssignment, PostprocessError> {
    let k = assignment.n_clusters();
    if graph.n_vertices != k {
        return Err(PostprocessError::VertexCountMismatch(graph.n_vertices, k));
    }
    for edge in &graph.edges {
        if edge.i >= k || edge.j >= k {
            return Err(PostprocessError::IndexOutOfRange(edge.i, edge.j, k));
        }
    }
    let mut uf = UnionFind::new(k);
    for edge in &graph.edges {
        uf.union(edge.i, edge.j);
    }
    let mut merged = Vec::new();
    for component in uf.components() {
        if component.len() == 1 {
            merged.push(assignment.clusters[component[0]].clone());
            continue;
        }
        let mut member_ids: Vec<SentenceId> = Vec::new();
        for &idx in &component {
            member_ids.extend(assignment.clusters[idx].member_ids.iter().cloned());
        }
        let mut cluster = Cluster::new(member_ids).expect("merged cluster is non-empty");
        let parts: Vec<&Cluster> = component.iter().map(|&i| &assignment.clusters[i]).collect();
        cluster.verdict = uniform(parts.iter().map(|c| c.verdict));
        cluster.role = uniform(parts.iter().map(|c| c.role));
        cluster.low_confidence = parts.iter().any(|c| c.low_confidence);
        cluster.label = None; // re-named downstream
        merged.push(cluster);
    }
    let result = ClusterAssignment::new(merged, assignment.source_iteration)
        .expect("merging disjoint clusters stays disjoint");
    debug_assert!(result.total_members() == assignment.total_members());
    Ok(result)
}

fn uniform<T: PartialEq + Copy>(mut values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let first = values.next().flatten()?;
    for v in values {
        if v != Some(first) {
            return None;
        }
    }
    Some(first)
}

/// Action-token lexicon deciding which dialogue role a label implies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleLexicon {
    pub customer_actions: BTreeSet<String>,
    pub agent_actions: BTreeSet<String>,
}

const DEFAULT_LEXICON: &str = include_str!("../../assets/role_lexicon.json");

impl Default for RoleLexicon {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICON).expect("bundled role lexicon is valid JSON")
    }
}

impl RoleLexicon {
    pub fn from_file(path: &std::path::Path) -> Result<Self, PostprocessError> {
        let text = std::fs::read_to_string(path).map_err(|e| PostprocessError::LexiconLoad {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let lexicon: RoleLexicon =
            serde_json::from_str(&text).map_err(|e| PostprocessError::LexiconLoad {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn validate(&self) -> Result<(), PostprocessError> {
        if let Some(shared) = self.customer_actions.intersection(&self.agent_actions).next() {
            return Err(PostprocessError::LexiconOverlap(shared.clone()));
        }
        Ok(())
    }

    pub fn role_of(&self, action: &str) -> Option<Role> {
        if self.customer_actions.contains(action) {
            Some(Role::Customer)
        } else if self.agent_actions.contains(action) {
            Some(Role::Agent)
        } else {
            None
        }
    }
}

/// Sentence ids split by the role implied by their cluster's label action.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoleSplit {
    pub customer: Vec<SentenceId>,
    pub agent: Vec<SentenceId>,
    pub unknown: Vec<SentenceId>,
}

/// Divides cluster members into customer/agent/unknown groups by the action
/// token of each cluster's intent label.
pub fn separate_roles(
    clusters: &[Cluster],
    lexicon: &RoleLexicon,
) -> Result<RoleSplit, PostprocessError> {
    lexicon.validate()?;
    let mut split = RoleSplit::default();
    for (idx, cluster) in clusters.iter().enumerate() {
        let label = cluster
            .label
            .as_ref()
            .ok_or(PostprocessError::MissingLabel(idx))?;
        let bucket = match lexicon.role_of(&label.action) {
            Some(Role::Customer) => &mut split.customer,
            Some(Role::Agent) => &mut split.agent,
            None => &mut split.unknown,
        };
        bucket.extend(cluster.member_ids.iter().cloned());
    }
    split.customer.sort();
    split.agent.sort();
    split.unknown.sort();
    Ok(split)
}

/// Re-clusters each non-empty role group independently with the full loop
/// and unions the results, recording role provenance on every cluster.
pub fn role_aware_recluster(
    split: &RoleSplit,
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    config: &LoopConfig,
    deps: &PipelineDeps,
) -> Result<ClusterAssignment, PipelineError> {
    let groups: [(&[SentenceId], Option<Role>, &str); 3] = [
        (&split.customer, Some(Role::Customer), "roles-customer"),
        (&split.agent, Some(Role::Agent), "roles-agent"),
        (&split.unknown, None, "roles-unknown"),
    ];
    let mut clusters = Vec::new();
    let mut max_iteration = 0;
    for (ids, role, tag) in groups {
        if ids.is_empty() {
            continue;
        }
        let rows: Vec<usize> = ids
            .iter()
            .map(|id| {
                corpus
                    .row_of(id)
                    .ok_or_else(|| PipelineError::InvalidConfig(format!("unknown id {id}")))
            })
            .collect::<Result<_, _>>()?;
        let records = rows
            .iter()
            .map(|&r| corpus.records()[r].clone())
            .collect::<Vec<_>>();
        let sub_corpus =
            Corpus::new(records).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        let sub_matrix = embeddings.subset(&rows);

        let sub_deps = PipelineDeps {
            oracles: deps.oracles,
            global_seed: derive_seed(deps.global_seed, tag, 0),
            max_in_flight: deps.max_in_flight,
        };
        let mut sub_config = config.clone();
        // Candidate counts above the group size are pruned per iteration
        // anyway; groups smaller than every candidate still need one.
        sub_config.candidate_ns = config
            .candidate_ns
            .iter()
            .copied()
            .filter(|&n| n <= ids.len())
            .collect();
        if sub_config.candidate_ns.is_empty() {
            sub_config.candidate_ns = vec![1];
        }

        let PipelineOutcome {
            assignment,
            residual_ids: _,
            logs,
            oracle_failures: _,
        } = run_pipeline(&sub_corpus, &sub_matrix, &sub_config, &sub_deps)?;
        max_iteration = max_iteration.max(logs.len() as u32);
        for mut cluster in assignment.clusters {
            cluster.role = role;
            clusters.push(cluster);
        }
    }
    Ok(ClusterAssignment::new(clusters, max_iteration)
        .expect("role groups are disjoint by construction"))
}
