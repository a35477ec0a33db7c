//! Iterative oracle-in-the-loop clustering.
//!
//! Each iteration clusters the unassigned working set at every candidate
//! cluster count, judges every cluster's coherence, keeps the good clusters
//! of the candidate with the best good/bad ratio, and continues on the
//! residual until it is small enough or the iteration budget runs out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{self, ClusteringError, ClusteringSpec};
use crate::oracle::{crowd_vote, CoherenceVerdict, Oracle, OracleError};
use crate::sampling::{self, SamplingError, SamplingSpec};
use crate::seed::derive_seed;
use crate::types::{
    CandidateRow, Cluster, ClusterAssignment, Corpus, EmbeddingMatrix, IterationLog, SentenceId,
    Verdict,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no candidate cluster count could be evaluated")]
    NoCandidates,
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("all {attempts} oracle calls failed in iteration {epoch}: {last}")]
    OracleFailure {
        epoch: u32,
        attempts: u64,
        last: String,
    },
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// What happens to sentences still unassigned when the loop exits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualPolicy {
    /// Append the last iteration's bad clusters, restricted to residuals,
    /// with verdict Bad and a low-confidence flag (nothing is lost).
    #[default]
    EmitFlagged,
    /// Return residuals separately, never silently discarded.
    Drop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub candidate_ns: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_t_max")]
    pub t_max: u32,
    pub clustering: ClusteringSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub pruning_enabled: bool,
    #[serde(default = "default_pruning_top_k")]
    pub pruning_top_k: usize,
    #[serde(default)]
    pub residual_policy: ResidualPolicy,
}

fn default_epsilon() -> f64 {
    0.02
}

fn default_t_max() -> u32 {
    10
}

fn default_pruning_top_k() -> usize {
    5
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.candidate_ns.is_empty() {
            return Err(PipelineError::InvalidConfig("candidate_ns is empty".into()));
        }
        if self.candidate_ns.contains(&0) {
            return Err(PipelineError::InvalidConfig(
                "candidate_ns must be strictly positive".into(),
            ));
        }
        if self.candidate_ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PipelineError::InvalidConfig(
                "candidate_ns must be distinct and sorted".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if self.t_max == 0 {
            return Err(PipelineError::InvalidConfig("t_max must be >= 1".into()));
        }
        if self.pruning_top_k == 0 {
            return Err(PipelineError::InvalidConfig(
                "pruning_top_k must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Shared dependencies for one pipeline run.
pub struct PipelineDeps<'a> {
    pub oracles: &'a [Box<dyn Oracle>],
    pub global_seed: u64,
    /// Bounded parallelism for per-cluster oracle requests.
    pub max_in_flight: usize,
}

impl<'a> PipelineDeps<'a> {
    pub fn new(oracles: &'a [Box<dyn Oracle>], global_seed: u64) -> Self {
        PipelineDeps {
            oracles,
            global_seed,
            max_in_flight: 8,
        }
    }
}

/// Result of evaluating one candidate cluster count on the working set.
pub struct CandidateEvaluation {
    pub assignment: ClusterAssignment,
    pub verdicts: Vec<CoherenceVerdict>,
    pub oracle_calls: u64,
    pub oracle_failures: u64,
    pub last_failure: Option<String>,
}

impl CandidateEvaluation {
    pub fn good_flags(&self) -> Vec<bool> {
        self.verdicts.iter().map(|v| v.is_good()).collect()
    }
}

/// Clusters the working set at `n_clusters`, samples each cluster and asks
/// every oracle (crowd-voted when several are configured, majority over
/// sample repetitions) for one verdict per cluster.
///
/// A failed oracle call marks the cluster Bad and is reported in the
/// failure counters (fail-safe toward refinement).
pub fn evaluate_candidate(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    working_ids: &[SentenceId],
    n_clusters: usize,
    config: &LoopConfig,
    deps: &PipelineDeps,
    epoch: u32,
) -> Result<CandidateEvaluation, PipelineError> {
    let rows: Vec<usize> = working_ids
        .iter()
        .map(|id| corpus.row_of(id).expect("working id missing from corpus"))
        .collect();
    let working_matrix = embeddings.subset(&rows);

    let clustering_seed = derive_seed(
        derive_seed(deps.global_seed, "loop-clustering", epoch as u64),
        "candidate",
        n_clusters as u64,
    );
    let spec = config
        .clustering
        .with_k(n_clusters)
        .with_seed(clustering_seed);
    let mut assignment = clustering::cluster(&working_matrix, working_ids, &spec)?;

    let sampling_base = derive_seed(
        derive_seed(deps.global_seed, "loop-sampling", epoch as u64),
        "candidate",
        n_clusters as u64,
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(deps.max_in_flight.max(1))
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("thread pool: {e}")))?;

    struct ClusterJudgment {
        verdict: CoherenceVerdict,
        calls: u64,
        failures: u64,
        last_failure: Option<String>,
    }

    let judgments: Vec<ClusterJudgment> = pool.install(|| {
        use rayon::prelude::*;
        assignment
            .clusters
            .par_iter()
            .enumerate()
            .map(|(cluster_idx, cluster)| {
                let sample_spec = SamplingSpec {
                    seed: derive_seed(sampling_base, "cluster", cluster_idx as u64),
                    ..config.sampling
                };
                let samples =
                    sampling::repeated_samples(embeddings, corpus, cluster, &sample_spec)?;
                let mut votes = Vec::with_capacity(samples.len() * deps.oracles.len());
                let mut calls = 0u64;
                let mut failures = 0u64;
                let mut last_failure = None;
                for sample in &samples {
                    let texts: Vec<String> = sample
                        .iter()
                        .map(|id| {
                            corpus
                                .record(id)
                                .expect("sampled id missing from corpus")
                                .text
                                .clone()
                        })
                        .collect();
                    for oracle in deps.oracles {
                        calls += 1;
                        match oracle.evaluate_coherence(&texts) {
                            Ok(verdict) => votes.push(verdict),
                            Err(e) => {
                                log::warn!(
                                    "oracle {} failed on cluster {cluster_idx}: {e}",
                                    oracle.backend_id()
                                );
                                failures += 1;
                                last_failure = Some(e.to_string());
                                votes.push(CoherenceVerdict::new(
                                    Verdict::Bad,
                                    oracle.backend_id(),
                                    format!("oracle failure: {e}"),
                                ));
                            }
                        }
                    }
                }
                let verdict = if votes.len() == 1 {
                    votes.pop().expect("one vote")
                } else {
                    crowd_vote(&votes)
                };
                Ok(ClusterJudgment {
                    verdict,
                    calls,
                    failures,
                    last_failure,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()
    })?;

    let mut verdicts = Vec::with_capacity(judgments.len());
    let mut oracle_calls = 0u64;
    let mut oracle_failures = 0u64;
    let mut last_failure = None;
    for (cluster, judgment) in assignment.clusters.iter_mut().zip(judgments) {
        cluster.verdict = Some(judgment.verdict.value);
        oracle_calls += judgment.calls;
        oracle_failures += judgment.failures;
        if judgment.last_failure.is_some() {
            last_failure = judgment.last_failure;
        }
        verdicts.push(judgment.verdict);
    }
    Ok(CandidateEvaluation {
        assignment,
        verdicts,
        oracle_calls,
        oracle_failures,
        last_failure,
    })
}

/// The selection rule: maximize good/(bad + 1) over cluster counts, ties
/// broken toward the smaller candidate.
pub fn select_best_n(candidates: &BTreeMap<usize, Vec<bool>>) -> Result<usize, PipelineError> {
    let mut best: Option<(usize, f64)> = None;
    for (&n, flags) in candidates {
        let good = flags.iter().filter(|&&g| g).count() as f64;
        let bad = flags.len() as f64 - good;
        let ratio = good / (bad + 1.0);
        match best {
            Some((_, best_ratio)) if ratio <= best_ratio => {}
            _ => best = Some((n, ratio)),
        }
    }
    best.map(|(n, _)| n).ok_or(PipelineError::NoCandidates)
}

/// Everything a pipeline run produces.
pub struct PipelineOutcome {
    /// Retained good clusters; under `EmitFlagged` also the final bad
    /// clusters (verdict Bad, `low_confidence` set).
    pub assignment: ClusterAssignment,
    /// Ids never absorbed into a good cluster.
    pub residual_ids: Vec<SentenceId>,
    pub logs: Vec<IterationLog>,
    pub oracle_failures: u64,
}

pub fn run_pipeline(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    config: &LoopConfig,
    deps: &PipelineDeps,
) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    if embeddings.n_rows() != corpus.len() {
        return Err(PipelineError::InvalidConfig(format!(
            "{} embedding rows for {} sentences",
            embeddings.n_rows(),
            corpus.len()
        )));
    }

    let total = corpus.len() as f64;
    let mut working: Vec<SentenceId> = corpus.ids().cloned().collect();
    let mut retained: Vec<Cluster> = Vec::new();
    let mut logs: Vec<IterationLog> = Vec::new();
    let mut last_bad_clusters: Vec<Cluster> = Vec::new();
    let mut cumulative_calls = 0u64;
    let mut total_failures = 0u64;
    let mut epoch = 0u32;

    while working.len() as f64 / total > config.epsilon && epoch < config.t_max {
        let candidates = candidate_set(config, &logs, deps, working.len())?;
        if candidates.is_empty() {
            log::warn!(
                "iteration {epoch}: no feasible candidate for working set of {}",
                working.len()
            );
            break;
        }

        let mut evaluations: BTreeMap<usize, CandidateEvaluation> = BTreeMap::new();
        let mut iteration_attempts = 0u64;
        let mut iteration_failures = 0u64;
        let mut last_failure = None;
        for &n in &candidates {
            match evaluate_candidate(corpus, embeddings, &working, n, config, deps, epoch) {
                Ok(eval) => {
                    cumulative_calls += eval.oracle_calls;
                    iteration_attempts += eval.oracle_calls;
                    iteration_failures += eval.oracle_failures;
                    if eval.last_failure.is_some() {
                        last_failure = eval.last_failure.clone();
                    }
                    evaluations.insert(n, eval);
                }
                Err(PipelineError::Clustering(e)) => {
                    log::warn!("iteration {epoch}: candidate {n} skipped: {e}");
                }
                Err(other) => return Err(other),
            }
        }
        total_failures += iteration_failures;
        if iteration_attempts > 0 && iteration_failures == iteration_attempts {
            return Err(PipelineError::OracleFailure {
                epoch,
                attempts: iteration_attempts,
                last: last_failure.unwrap_or_else(|| "unknown".into()),
            });
        }

        let flags: BTreeMap<usize, Vec<bool>> = evaluations
            .iter()
            .map(|(&n, e)| (n, e.good_flags()))
            .collect();
        let chosen_n = select_best_n(&flags)?;

        let rows: Vec<CandidateRow> = evaluations
            .iter()
            .map(|(&n, e)| {
                let mut good_clusters = 0u64;
                let mut good_sentences = 0u64;
                let mut bad_sentences = 0u64;
                for cluster in &e.assignment.clusters {
                    if cluster.verdict == Some(Verdict::Good) {
                        good_clusters += 1;
                        good_sentences += cluster.len() as u64;
                    } else {
                        bad_sentences += cluster.len() as u64;
                    }
                }
                CandidateRow::new(
                    n,
                    good_clusters,
                    n as u64 - good_clusters,
                    good_sentences,
                    bad_sentences,
                )
            })
            .collect();

        let chosen = evaluations.remove(&chosen_n).expect("chosen candidate");
        let mut absorbed = std::collections::HashSet::new();
        last_bad_clusters.clear();
        for mut cluster in chosen.assignment.clusters {
            if cluster.verdict == Some(Verdict::Good) {
                for id in &cluster.member_ids {
                    absorbed.insert(id.clone());
                }
                retained.push(cluster);
            } else {
                cluster.verdict = Some(Verdict::Bad);
                last_bad_clusters.push(cluster);
            }
        }
        working.retain(|id| !absorbed.contains(id));

        logs.push(IterationLog {
            epoch,
            rows,
            chosen_n,
            oracle_calls: cumulative_calls,
        });

        debug_assert!(
            {
                let mut covered: Vec<&SentenceId> = retained
                    .iter()
                    .flat_map(|c| c.member_ids.iter())
                    .chain(working.iter())
                    .collect();
                covered.sort();
                covered.dedup();
                covered.len() == corpus.len()
            },
            "retained and residual no longer partition the corpus"
        );

        epoch += 1;
    }

    let residual_ids = working.clone();
    let mut clusters = retained;
    if config.residual_policy == ResidualPolicy::EmitFlagged && !working.is_empty() {
        if last_bad_clusters.is_empty() {
            // The loop never ran; emit the whole residual as one flagged
            // cluster so downstream consumers still see every sentence.
            let mut cluster = Cluster::new(working).expect("non-empty residual");
            cluster.verdict = Some(Verdict::Bad);
            cluster.low_confidence = true;
            clusters.push(cluster);
        } else {
            for mut cluster in last_bad_clusters.drain(..) {
                cluster.low_confidence = true;
                clusters.push(cluster);
            }
        }
    }

    let assignment = ClusterAssignment::new(clusters, epoch)
        .expect("pipeline clusters must stay disjoint");
    Ok(PipelineOutcome {
        assignment,
        residual_ids,
        logs,
        oracle_failures: total_failures,
    })
}

/// The candidate grid for this iteration: the full grid at iteration 0, the
/// oracle-predicted top-k afterwards when pruning is enabled, always
/// intersected with feasible counts (n <= working set size).
fn candidate_set(
    config: &LoopConfig,
    logs: &[IterationLog],
    deps: &PipelineDeps,
    working_len: usize,
) -> Result<Vec<usize>, PipelineError> {
    let base: Vec<usize> = if config.pruning_enabled && !logs.is_empty() {
        let oracle = deps
            .oracles
            .first()
            .ok_or_else(|| PipelineError::InvalidConfig("no oracle configured".into()))?;
        let predicted = oracle.predict_search_space(logs, config.pruning_top_k)?;
        let mut pruned: Vec<usize> = predicted
            .into_iter()
            .filter(|n| config.candidate_ns.binary_search(n).is_ok())
            .collect();
        if pruned.is_empty() {
            // Prediction missed the grid entirely; keep the full grid
            // rather than stalling.
            pruned = config.candidate_ns.clone();
        }
        pruned.sort_unstable();
        pruned
    } else {
        config.candidate_ns.clone()
    };
    Ok(base.into_iter().filter(|&n| n <= working_len).collect())
}

/// Loop-attributable call costs, reconstructed from the logs: coherence
/// calls are the cumulative counter; naming calls are one per retained good
/// cluster (merged-cluster renames are counted by the engine on top).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub coherence_calls: u64,
    pub naming_calls: u64,
    pub total_calls: u64,
}

pub fn account_costs(logs: &[IterationLog]) -> CostBreakdown {
    let coherence_calls = logs.last().map(|l| l.oracle_calls).unwrap_or(0);
    let naming_calls = logs
        .iter()
        .map(|log| {
            log.rows
                .iter()
                .find(|r| r.n_cluster == log.chosen_n)
                .map(|r| r.good_clusters)
                .unwrap_or(0)
        })
        .sum();
    CostBreakdown {
        coherence_calls,
        naming_calls,
        total_calls: coherence_calls + naming_calls,
    }
}
