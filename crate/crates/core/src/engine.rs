//! End-to-end orchestration: load corpus and embeddings, run the iterative
//! loop, name clusters, merge by label affinity, separate roles and
//! re-cluster, compute metrics and write the run artifacts.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{normalize, GeometryError, UnitVector};
use crate::io::{
    load_corpus, load_or_fetch_embeddings, write_clusters_jsonl, write_iterations_csv,
    write_report_json, EmbeddingSource, IoError, RunConfig,
};
use crate::metrics::{
    goodness_final, goodness_ratio, nmi, semantic_diversity, verdicts_of, MetricsError,
    NmiNormalization, Report,
};
use crate::oracle::{prompts::FewShotAssets, Oracle, OracleBackendSpec, OracleError};
use crate::pipeline::{
    account_costs, run_pipeline, CostBreakdown, PipelineDeps, PipelineError, PipelineOutcome,
};
use crate::postprocess::{
    build_affinity_graph, merge_clusters, role_aware_recluster, separate_roles, PostprocessError,
    RoleLexicon,
};
use crate::sampling::{sample_cluster, SamplingSpec};
use crate::seed::{content_hash, derive_rng, derive_seed};
use crate::types::{Cluster, ClusterAssignment, Corpus, EmbeddingMatrix, SentenceId};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Corpus(#[from] crate::types::CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl EngineError {
    /// CLI exit code: 1 for configuration problems, 2 for oracle failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Oracle(_) => 2,
            EngineError::Pipeline(PipelineError::Oracle(_))
            | EngineError::Pipeline(PipelineError::OracleFailure { .. }) => 2,
            _ => 1,
        }
    }
}

/// Maps a label string to a point on the unit hypersphere.
///
/// The remote variant embeds the label text through the configured
/// embeddings endpoint (cached per string). The hash variant is the
/// offline stand-in: a seeded unit vector derived from the label string,
/// so equal labels embed identically and distinct labels land nearly
/// orthogonal in high dimension.
pub enum LabelEmbedder {
    Hash { dim: usize },
    Remote { endpoint: String, model: String, api_key: Option<String> },
}

impl LabelEmbedder {
    pub fn from_source(source: &EmbeddingSource, dim: usize) -> Self {
        match source {
            EmbeddingSource::Remote {
                endpoint,
                model,
                api_key,
            } => LabelEmbedder::Remote {
                endpoint: endpoint.clone(),
                model: model.clone(),
                api_key: api_key.clone(),
            },
            EmbeddingSource::File { .. } => LabelEmbedder::Hash { dim },
        }
    }

    pub fn embed(&self, labels: &[String]) -> Result<Vec<UnitVector>, EngineError> {
        match self {
            LabelEmbedder::Hash { dim } => labels
                .iter()
                .map(|label| {
                    let mut rng = derive_rng(0, "label-embedding", content_hash([label.as_bytes()]));
                    let v: Vec<f64> = (0..*dim)
                        .map(|_| {
                            use rand::Rng;
                            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                            let u2: f64 = rng.gen_range(0.0..1.0);
                            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                        })
                        .collect();
                    normalize(&v).map_err(EngineError::from)
                })
                .collect(),
            LabelEmbedder::Remote {
                endpoint,
                model,
                api_key,
            } => {
                let texts: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
                let key = api_key
                    .clone()
                    .or_else(|| std::env::var("EMBED_API_KEY").ok());
                let matrix =
                    crate::io::fetch_embeddings(&texts, endpoint, model, key.as_deref(), 3)?;
                matrix
                    .rows()
                    .map(|row| normalize(row).map_err(EngineError::from))
                    .collect()
            }
        }
    }
}

/// Everything a run produces, before or after writing to disk.
#[derive(Debug)]
pub struct RunArtifacts {
    pub assignment: ClusterAssignment,
    pub logs: Vec<crate::types::IterationLog>,
    pub report: Report,
    pub residual_ids: Vec<SentenceId>,
}

pub fn execute_run(config: &RunConfig) -> Result<RunArtifacts, EngineError> {
    let records = load_corpus(&config.corpus_path)?;
    let corpus = Corpus::new(records)?;
    if corpus.is_empty() {
        return Err(EngineError::Config("corpus is empty".into()));
    }
    let embeddings =
        load_or_fetch_embeddings(corpus.records(), &config.embeddings, &config.output_dir)?;

    let gold: HashMap<String, String> = corpus
        .gold_by_text()
        .into_iter()
        .map(|(t, l)| (t.to_string(), l.to_string()))
        .collect();
    let needs_gold = config.oracles.iter().any(|o| {
        matches!(
            o,
            OracleBackendSpec::Reference { .. } | OracleBackendSpec::NoisyReference { .. }
        )
    });
    if needs_gold && gold.is_empty() {
        return Err(EngineError::Config(
            "reference oracle configured but the corpus has no gold labels".into(),
        ));
    }

    let assets = match (&config.few_shot_coherence_path, &config.few_shot_naming_path) {
        (Some(c), Some(n)) => FewShotAssets::from_files(c, n)?,
        (None, None) => FewShotAssets::default(),
        _ => {
            return Err(EngineError::Config(
                "few-shot asset paths must be given together or not at all".into(),
            ))
        }
    };
    let oracles: Vec<Box<dyn Oracle>> = config
        .oracles
        .iter()
        .map(|spec| spec.build(&gold, &assets))
        .collect::<Result<_, _>>()?;
    let deps = PipelineDeps {
        oracles: &oracles,
        global_seed: config.seed,
        max_in_flight: config.max_in_flight,
    };

    let lexicon = match &config.roles.lexicon_path {
        Some(path) => RoleLexicon::from_file(path)?,
        None => RoleLexicon::default(),
    };
    lexicon.validate()?;

    run_phases(config, &corpus, &embeddings, &deps, &oracles, &lexicon)
}

fn run_phases(
    config: &RunConfig,
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    deps: &PipelineDeps,
    oracles: &[Box<dyn Oracle>],
    lexicon: &RoleLexicon,
) -> Result<RunArtifacts, EngineError> {
    let namer: &dyn Oracle = oracles.first().expect("config guarantees >= 1 oracle").as_ref();
    let mut naming_calls = 0u64;

    // Phase 1: the iterative loop.
    let PipelineOutcome {
        assignment,
        residual_ids,
        logs,
        oracle_failures: _,
    } = run_pipeline(corpus, embeddings, &config.loop_config, deps)?;

    // Phase 2: name every cluster.
    let mut assignment = assignment;
    name_unlabeled_clusters(
        &mut assignment,
        corpus,
        embeddings,
        namer,
        &config.loop_config.sampling,
        deps.global_seed,
        &mut naming_calls,
    )?;

    // Phase 3: merge clusters whose labels agree semantically.
    if config.merge.enabled {
        merge_and_rename(
            &mut assignment,
            config,
            corpus,
            embeddings,
            namer,
            derive_seed(deps.global_seed, "rename-after-merge", 0),
            &mut naming_calls,
        )?;
    }

    // Phase 4: role separation and per-role re-clustering. The re-clustered
    // groups can reintroduce duplicated intents, so the merge pass applies
    // to the role-phase output as well.
    if config.roles.enabled {
        let split = separate_roles(&assignment.clusters, lexicon)?;
        let mut with_roles =
            role_aware_recluster(&split, corpus, embeddings, &config.loop_config, deps)?;
        name_unlabeled_clusters(
            &mut with_roles,
            corpus,
            embeddings,
            namer,
            &config.loop_config.sampling,
            derive_seed(deps.global_seed, "rename-after-roles", 0),
            &mut naming_calls,
        )?;
        if config.merge.enabled {
            merge_and_rename(
                &mut with_roles,
                config,
                corpus,
                embeddings,
                namer,
                derive_seed(deps.global_seed, "rename-after-roles-merge", 0),
                &mut naming_calls,
            )?;
        }
        assignment = with_roles;
    }

    // Phase 5: metrics and the report.
    let verdicts = verdicts_of(&assignment);
    let gold_map: HashMap<SentenceId, String> = corpus
        .records()
        .iter()
        .filter_map(|r| r.gold_label.clone().map(|l| (r.id.clone(), l)))
        .collect();
    let nmi_value = if gold_map.len() == corpus.len() {
        Some(nmi(&assignment, &gold_map, NmiNormalization::Arithmetic)?)
    } else {
        None
    };
    let ratio = goodness_ratio(&verdicts)?;
    let costs_from_logs = account_costs(&logs);
    let report = Report {
        nmi: nmi_value,
        nmi_normalization: NmiNormalization::Arithmetic,
        goodness_final: goodness_final(&verdicts)?,
        goodness_ratio: ratio.is_finite().then_some(ratio),
        semantic_diversity: Some(semantic_diversity(embeddings, corpus, &assignment)?),
        n_clusters: assignment.n_clusters(),
        oracle_calls: CostBreakdown {
            coherence_calls: costs_from_logs.coherence_calls,
            naming_calls,
            total_calls: costs_from_logs.coherence_calls + naming_calls,
        },
        probability_mode: config.merge.config.probability_mode,
    };

    Ok(RunArtifacts {
        assignment,
        logs,
        report,
        residual_ids,
    })
}

/// Builds the label-affinity graph over the assignment's labels, merges
/// connected clusters and re-names anything that lost its label.
fn merge_and_rename(
    assignment: &mut ClusterAssignment,
    config: &RunConfig,
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    namer: &dyn Oracle,
    rename_seed: u64,
    naming_calls: &mut u64,
) -> Result<(), EngineError> {
    if assignment.n_clusters() < 2 {
        return Ok(());
    }
    let embedder = LabelEmbedder::from_source(&config.embeddings, embeddings.dim());
    let labels: Vec<String> = assignment
        .clusters
        .iter()
        .map(|c| {
            c.label
                .as_ref()
                .expect("clusters are named before merging")
                .canonical()
        })
        .collect();
    let label_embeddings = embedder.embed(&labels)?;
    let graph = build_affinity_graph(&label_embeddings, &config.merge.config)?;
    *assignment = merge_clusters(assignment, &graph)?;
    name_unlabeled_clusters(
        assignment,
        corpus,
        embeddings,
        namer,
        &config.loop_config.sampling,
        rename_seed,
        naming_calls,
    )
}

/// Samples each unlabeled cluster and asks the naming oracle for its
/// Action-Objective label. Returns through `naming_calls` how many oracle
/// calls were made.
pub fn name_unlabeled_clusters(
    assignment: &mut ClusterAssignment,
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    namer: &dyn Oracle,
    sampling: &SamplingSpec,
    seed: u64,
    naming_calls: &mut u64,
) -> Result<(), EngineError> {
    for (idx, cluster) in assignment.clusters.iter_mut().enumerate() {
        if cluster.label.is_some() {
            continue;
        }
        let spec = SamplingSpec {
            seed: derive_seed(seed, "naming-sample", idx as u64),
            ..*sampling
        };
        let sample = sample_cluster(embeddings, corpus, cluster, &spec)
            .map_err(|e| EngineError::Config(e.to_string()))?;
        let texts: Vec<String> = sample
            .iter()
            .map(|id| corpus.record(id).expect("sampled id exists").text.clone())
            .collect();
        *naming_calls += 1;
        cluster.label = Some(namer.name_cluster(&texts)?);
    }
    Ok(())
}

/// Runs end to end and writes clusters.jsonl, iterations.csv and
/// report.json into the output directory.
pub fn execute_run_to_dir(config: &RunConfig) -> Result<RunArtifacts, EngineError> {
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| IoError::file(&config.output_dir, e))?;
    let artifacts = execute_run(config)?;
    write_artifacts(&config.output_dir, &artifacts)?;
    Ok(artifacts)
}

pub fn write_artifacts(dir: &Path, artifacts: &RunArtifacts) -> Result<(), EngineError> {
    write_clusters_jsonl(&dir.join("clusters.jsonl"), &artifacts.assignment)?;
    write_iterations_csv(&dir.join("iterations.csv"), &artifacts.logs)?;
    write_report_json(&dir.join("report.json"), &artifacts.report)?;
    Ok(())
}

/// Clusters with every flagged bad cluster removed; used when a consumer
/// wants only the high-confidence output.
pub fn good_clusters_only(assignment: &ClusterAssignment) -> Vec<&Cluster> {
    assignment
        .clusters
        .iter()
        .filter(|c| !c.low_confidence)
        .collect()
}
