//! LLM-in-the-loop intent clustering.
//!
//! Wraps conventional clustering in an oracle-guided loop: per-cluster
//! coherence verdicts drive cluster-count selection and iterative refinement,
//! and generated intent labels drive probabilistic merging and role
//! separation on the unit hypersphere.

pub mod clustering;
pub mod engine;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod postprocess;
pub mod sampling;
pub mod seed;
pub mod types;

#[cfg(test)]
pub(crate) mod testutil;

pub use engine::{execute_run, execute_run_to_dir, EngineError, RunArtifacts};
pub use io::RunConfig;
pub use types::{
    parse_intent_label, Cluster, ClusterAssignment, Corpus, EmbeddingMatrix, IntentLabel,
    IterationLog, Role, SentenceId, SentenceRecord, Verdict,
};
