//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration/input error, 2 oracle failure.
//! Errors print as `ERROR <code>: <message>` on stderr.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use intent_clustering::engine::{
    execute_run_to_dir, name_unlabeled_clusters, EngineError, LabelEmbedder,
};
use intent_clustering::io::{
    load_corpus, load_or_fetch_embeddings, read_clusters_jsonl, read_iterations_csv,
    write_clusters_jsonl, write_report_json, EmbeddingSource, RunConfig,
};
use intent_clustering::metrics::{
    goodness_final, goodness_ratio, nmi, semantic_diversity, verdicts_of, NmiNormalization, Report,
};
use intent_clustering::oracle::{extrapolate_search_space, prompts::FewShotAssets, Oracle};
use intent_clustering::pipeline::{account_costs, CostBreakdown, PipelineDeps};
use intent_clustering::postprocess::{
    build_affinity_graph, merge_clusters, role_aware_recluster, separate_roles, RoleLexicon,
};
use intent_clustering::seed::derive_seed;
use intent_clustering::types::SentenceId;
use intent_clustering::Corpus;

#[derive(Parser)]
#[command(name = "intent-cluster", version, about = "Oracle-in-the-loop intent clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replace the configured oracle backends.
    #[arg(long, value_parser = ["reference", "noisy", "remote"])]
    oracle: Option<String>,
    /// Disable the role-separation phase.
    #[arg(long)]
    no_roles: bool,
    /// Disable the merge phase.
    #[arg(long)]
    no_merge: bool,
    /// Enable log-driven search-space pruning from iteration 1 on.
    #[arg(long)]
    prune: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch embeddings for the corpus and write the binary matrix file.
    Embed {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output file (default: <output_dir>/embeddings.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline: loop, naming, merge, roles, metrics.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Merge the clusters of an existing clusters.jsonl by label affinity.
    Merge {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        clusters: PathBuf,
    },
    /// Separate an existing clustering by role and re-cluster per role.
    Roles {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        clusters: PathBuf,
    },
    /// Name unlabeled clusters of an existing clusters.jsonl.
    Name {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        clusters: PathBuf,
    },
    /// Score a predicted clustering against gold labels.
    Eval {
        /// Predicted clusters.jsonl.
        #[arg(long)]
        pred: PathBuf,
        /// Gold corpus.jsonl.
        #[arg(long)]
        gold: PathBuf,
        /// Optional binary embeddings for semantic diversity.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Where to write report.json (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict promising cluster counts from an iterations.csv log.
    Prune {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Recompute report.json from existing run artifacts.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let exit = match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = e
                .downcast_ref::<EngineError>()
                .map(EngineError::exit_code)
                .unwrap_or(1);
            eprintln!("ERROR {code}: {e:#}");
            code
        }
    };
    std::process::exit(exit);
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::from_file(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if args.no_roles {
        config.roles.enabled = false;
    }
    if args.no_merge {
        config.merge.enabled = false;
    }
    if args.prune {
        config.loop_config.pruning_enabled = true;
    }
    if let Some(kind) = &args.oracle {
        config.oracles = match kind.as_str() {
            "reference" => vec![intent_clustering::oracle::OracleBackendSpec::Reference {
                purity_threshold: 1.0,
            }],
            "noisy" => vec![intent_clustering::oracle::OracleBackendSpec::NoisyReference {
                purity_threshold: 1.0,
                flip_rate: 0.1,
                seed: config.seed,
            }],
            "remote" => {
                let remote = config.oracles.iter().find(|o| {
                    matches!(
                        o,
                        intent_clustering::oracle::OracleBackendSpec::RemoteChat { .. }
                    )
                });
                vec![remote
                    .cloned()
                    .ok_or_else(|| anyhow!("--oracle remote requires a remote_chat backend in the config"))?]
            }
            other => return Err(anyhow!("unknown oracle kind {other}")),
        };
    }
    Ok(config)
}

/// Corpus, normalized embeddings, oracle backends and lexicon for the
/// artifact-level subcommands.
struct Workspace {
    config: RunConfig,
    corpus: Corpus,
    embeddings: intent_clustering::EmbeddingMatrix,
    oracles: Vec<Box<dyn Oracle>>,
    lexicon: RoleLexicon,
}

fn open_workspace(args: &ConfigArgs) -> anyhow::Result<Workspace> {
    let config = load_config(args)?;
    let records = load_corpus(&config.corpus_path).map_err(EngineError::Io)?;
    let corpus = Corpus::new(records).map_err(EngineError::Corpus)?;
    let embeddings =
        load_or_fetch_embeddings(corpus.records(), &config.embeddings, &config.output_dir)
            .map_err(EngineError::Io)?;
    let gold: HashMap<String, String> = corpus
        .gold_by_text()
        .into_iter()
        .map(|(t, l)| (t.to_string(), l.to_string()))
        .collect();
    let assets = FewShotAssets::default();
    let oracles: Vec<Box<dyn Oracle>> = config
        .oracles
        .iter()
        .map(|spec| spec.build(&gold, &assets))
        .collect::<Result<_, _>>()
        .map_err(EngineError::Oracle)?;
    let lexicon = match &config.roles.lexicon_path {
        Some(path) => RoleLexicon::from_file(path).map_err(EngineError::Postprocess)?,
        None => RoleLexicon::default(),
    };
    Ok(Workspace {
        config,
        corpus,
        embeddings,
        oracles,
        lexicon,
    })
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Embed { config, out } => {
            let cfg = load_config(&config)?;
            let records = load_corpus(&cfg.corpus_path).map_err(EngineError::Io)?;
            if matches!(cfg.embeddings, EmbeddingSource::File { .. }) {
                return Err(anyhow!(
                    "embed requires a remote embeddings source in the config"
                ));
            }
            std::fs::create_dir_all(&cfg.output_dir)?;
            let matrix =
                load_or_fetch_embeddings(&records, &cfg.embeddings, &cfg.output_dir)
                    .map_err(EngineError::Io)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("embeddings.bin"));
            intent_clustering::io::save_embeddings(&path, &matrix).map_err(EngineError::Io)?;
            println!("wrote {} ({} x {})", path.display(), matrix.n_rows(), matrix.dim());
            Ok(())
        }
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let artifacts = execute_run_to_dir(&cfg)?;
            println!(
                "{} clusters, goodness {:.3}, nmi {}, outputs in {}",
                artifacts.report.n_clusters,
                artifacts.report.goodness_final,
                artifacts
                    .report
                    .nmi
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Merge { config, clusters } => {
            let ws = open_workspace(&config)?;
            let mut assignment = read_clusters_jsonl(&clusters).map_err(EngineError::Io)?;
            let labels: Vec<String> = assignment
                .clusters
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    c.label
                        .as_ref()
                        .map(|l| l.canonical())
                        .ok_or_else(|| anyhow!("cluster {i} has no label; run `name` first"))
                })
                .collect::<Result<_, _>>()?;
            let embedder =
                LabelEmbedder::from_source(&ws.config.embeddings, ws.embeddings.dim());
            let label_embeddings = embedder.embed(&labels)?;
            let graph = build_affinity_graph(&label_embeddings, &ws.config.merge.config)
                .map_err(EngineError::Postprocess)?;
            let before = assignment.n_clusters();
            assignment = merge_clusters(&assignment, &graph).map_err(EngineError::Postprocess)?;
            let mut naming_calls = 0u64;
            name_unlabeled_clusters(
                &mut assignment,
                &ws.corpus,
                &ws.embeddings,
                ws.oracles[0].as_ref(),
                &ws.config.loop_config.sampling,
                derive_seed(ws.config.seed, "rename-after-merge", 0),
                &mut naming_calls,
            )?;
            std::fs::create_dir_all(&ws.config.output_dir)?;
            let out = ws.config.output_dir.join("clusters.jsonl");
            write_clusters_jsonl(&out, &assignment).map_err(EngineError::Io)?;
            println!(
                "merged {before} -> {} clusters ({naming_calls} renames), wrote {}",
                assignment.n_clusters(),
                out.display()
            );
            Ok(())
        }
        Command::Roles { config, clusters } => {
            let ws = open_workspace(&config)?;
            let assignment = read_clusters_jsonl(&clusters).map_err(EngineError::Io)?;
            let split = separate_roles(&assignment.clusters, &ws.lexicon)
                .map_err(EngineError::Postprocess)?;
            let deps = PipelineDeps {
                oracles: &ws.oracles,
                global_seed: ws.config.seed,
                max_in_flight: ws.config.max_in_flight,
            };
            let mut reclustered = role_aware_recluster(
                &split,
                &ws.corpus,
                &ws.embeddings,
                &ws.config.loop_config,
                &deps,
            )
            .map_err(EngineError::Pipeline)?;
            let mut naming_calls = 0u64;
            name_unlabeled_clusters(
                &mut reclustered,
                &ws.corpus,
                &ws.embeddings,
                ws.oracles[0].as_ref(),
                &ws.config.loop_config.sampling,
                derive_seed(ws.config.seed, "rename-after-roles", 0),
                &mut naming_calls,
            )?;
            std::fs::create_dir_all(&ws.config.output_dir)?;
            let out = ws.config.output_dir.join("clusters.jsonl");
            write_clusters_jsonl(&out, &reclustered).map_err(EngineError::Io)?;
            println!(
                "role split: {} customer, {} agent, {} unknown -> {} clusters, wrote {}",
                split.customer.len(),
                split.agent.len(),
                split.unknown.len(),
                reclustered.n_clusters(),
                out.display()
            );
            Ok(())
        }
        Command::Name { config, clusters } => {
            let ws = open_workspace(&config)?;
            let mut assignment = read_clusters_jsonl(&clusters).map_err(EngineError::Io)?;
            let mut naming_calls = 0u64;
            name_unlabeled_clusters(
                &mut assignment,
                &ws.corpus,
                &ws.embeddings,
                ws.oracles[0].as_ref(),
                &ws.config.loop_config.sampling,
                derive_seed(ws.config.seed, "naming", 0),
                &mut naming_calls,
            )?;
            write_clusters_jsonl(&clusters, &assignment).map_err(EngineError::Io)?;
            println!("named {naming_calls} clusters in {}", clusters.display());
            Ok(())
        }
        Command::Eval {
            pred,
            gold,
            embeddings,
            out,
        } => {
            let assignment = read_clusters_jsonl(&pred).map_err(EngineError::Io)?;
            let records = load_corpus(&gold).map_err(EngineError::Io)?;
            let corpus = Corpus::new(records).map_err(EngineError::Corpus)?;
            let gold_map: HashMap<SentenceId, String> = corpus
                .records()
                .iter()
                .filter_map(|r| r.gold_label.clone().map(|l| (r.id.clone(), l)))
                .collect();
            let nmi_value = nmi(&assignment, &gold_map, NmiNormalization::Arithmetic)
                .map_err(EngineError::Metrics)?;
            let verdicts = verdicts_of(&assignment);
            let diversity = match embeddings {
                Some(path) => {
                    let mut matrix =
                        intent_clustering::io::load_embeddings(&path).map_err(EngineError::Io)?;
                    matrix.l2_normalize();
                    Some(
                        semantic_diversity(&matrix, &corpus, &assignment)
                            .map_err(EngineError::Metrics)?,
                    )
                }
                None => None,
            };
            let ratio = goodness_ratio(&verdicts).map_err(EngineError::Metrics)?;
            let report = Report {
                nmi: Some(nmi_value),
                nmi_normalization: NmiNormalization::Arithmetic,
                goodness_final: goodness_final(&verdicts).map_err(EngineError::Metrics)?,
                goodness_ratio: ratio.is_finite().then_some(ratio),
                semantic_diversity: diversity,
                n_clusters: assignment.n_clusters(),
                oracle_calls: CostBreakdown {
                    coherence_calls: 0,
                    naming_calls: 0,
                    total_calls: 0,
                },
                probability_mode: Default::default(),
            };
            match out {
                Some(path) => {
                    write_report_json(&path, &report).map_err(EngineError::Io)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            Ok(())
        }
        Command::Prune { logs, top_k } => {
            let logs = read_iterations_csv(&logs).map_err(EngineError::Io)?;
            let predicted = extrapolate_search_space(&logs, top_k);
            println!(
                "{}",
                predicted
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            );
            Ok(())
        }
        Command::Report { config } => {
            let ws = open_workspace(&config)?;
            let assignment = read_clusters_jsonl(&ws.config.output_dir.join("clusters.jsonl"))
                .map_err(EngineError::Io)?;
            let logs = read_iterations_csv(&ws.config.output_dir.join("iterations.csv"))
                .map_err(EngineError::Io)?;
            let gold_map: HashMap<SentenceId, String> = ws
                .corpus
                .records()
                .iter()
                .filter_map(|r| r.gold_label.clone().map(|l| (r.id.clone(), l)))
                .collect();
            let nmi_value = if gold_map.len() == ws.corpus.len() {
                Some(
                    nmi(&assignment, &gold_map, NmiNormalization::Arithmetic)
                        .map_err(EngineError::Metrics)?,
                )
            } else {
                None
            };
            let verdicts = verdicts_of(&assignment);
            let ratio = goodness_ratio(&verdicts).map_err(EngineError::Metrics)?;
            let costs = account_costs(&logs);
            let report = Report {
                nmi: nmi_value,
                nmi_normalization: NmiNormalization::Arithmetic,
                goodness_final: goodness_final(&verdicts).map_err(EngineError::Metrics)?,
                goodness_ratio: ratio.is_finite().then_some(ratio),
                semantic_diversity: Some(
                    semantic_diversity(&ws.embeddings, &ws.corpus, &assignment)
                        .map_err(EngineError::Metrics)?,
                ),
                n_clusters: assignment.n_clusters(),
                oracle_calls: costs,
                probability_mode: ws.config.merge.config.probability_mode,
            };
            let path = ws.config.output_dir.join("report.json");
            write_report_json(&path, &report).map_err(EngineError::Io)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
