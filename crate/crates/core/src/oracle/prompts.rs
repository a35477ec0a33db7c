//! Prompt templates and few-shot assets for the chat-based backends.

use serde::{Deserialize, Serialize};

use super::OracleError;

pub const COHERENCE_INSTRUCTION: &str = "You are a helpful assistant for sentence clustering. \
Based on the relevancy and common points of the following sentences in a cluster, classify the \
cluster as: \"Good\" or \"Bad\". Only provide the label without any additional content.";

pub const NAMING_INSTRUCTION: &str = "You are a helpful assistant for sentence clustering. \
Based on the relevancy and common points of the following sentences in a cluster, summarize the \
cluster with an \"Action-Objective\" label. Only provide the label without any additional content.";

pub const SEARCH_SPACE_INSTRUCTION: &str = "You are a helpful assistant for cluster-count \
selection. The log below shows, per epoch, how many sentences landed in good and bad clusters \
for each candidate cluster number, and which candidate was chosen. Predict the most promising \
cluster numbers for the next epoch. Only provide distinct integers separated by commas, best \
first, without any additional content.";

/// One few-shot demonstration: example sentences and the expected output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotPair {
    pub input: Vec<String>,
    pub output: String,
}

/// Five-pair demonstration block shipped with the crate; a config may
/// replace it with a custom asset file of the same shape.
#[derive(Debug, Clone)]
pub struct FewShotAssets {
    pub coherence: Vec<FewShotPair>,
    pub naming: Vec<FewShotPair>,
}

const DEFAULT_COHERENCE: &str = include_str!("../../assets/fewshot_coherence.json");
const DEFAULT_NAMING: &str = include_str!("../../assets/fewshot_naming.json");

impl Default for FewShotAssets {
    fn default() -> Self {
        FewShotAssets {
            coherence: serde_json::from_str(DEFAULT_COHERENCE)
                .expect("bundled coherence few-shot asset is valid JSON"),
            naming: serde_json::from_str(DEFAULT_NAMING)
                .expect("bundled naming few-shot asset is valid JSON"),
        }
    }
}

impl FewShotAssets {
    pub fn from_files(
        coherence_path: &std::path::Path,
        naming_path: &std::path::Path,
    ) -> Result<Self, OracleError> {
        let load = |path: &std::path::Path| -> Result<Vec<FewShotPair>, OracleError> {
            let text = std::fs::read_to_string(path).map_err(|e| OracleError::AssetError {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| OracleError::AssetError {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        };
        Ok(FewShotAssets {
            coherence: load(coherence_path)?,
            naming: load(naming_path)?,
        })
    }
}

fn render_sentences(sentences: &[String]) -> String {
    serde_json::to_string(sentences).expect("strings serialize to JSON")
}

fn render_with_few_shot(instruction: &str, pairs: &[FewShotPair], sentences: &[String]) -> String {
    let mut prompt = String::from(instruction);
    prompt.push_str("\n\n");
    for pair in pairs {
        prompt.push_str(&format!(
            "Example: input:{} output:{}\n",
            render_sentences(&pair.input),
            pair.output
        ));
    }
    prompt.push_str(&format!("\ninput:{} output:", render_sentences(sentences)));
    prompt
}

pub fn coherence_prompt(pairs: &[FewShotPair], sentences: &[String]) -> String {
    render_with_few_shot(COHERENCE_INSTRUCTION, pairs, sentences)
}

pub fn naming_prompt(pairs: &[FewShotPair], sentences: &[String]) -> String {
    render_with_few_shot(NAMING_INSTRUCTION, pairs, sentences)
}

/// Serializes iteration logs in the row format of the exported CSV
/// (n_cluster, good/bad sentence counts, rate) for the prediction prompt.
pub fn search_space_prompt(logs: &[crate::types::IterationLog], top_k: usize) -> String {
    let mut prompt = String::from(SEARCH_SPACE_INSTRUCTION);
    prompt.push_str("\n\n");
    for log in logs {
        prompt.push_str(&format!("epoch {}:\n", log.epoch));
        for row in &log.rows {
            let chosen = if row.n_cluster == log.chosen_n {
                " (chosen)"
            } else {
                ""
            };
            prompt.push_str(&format!(
                "  n_cluster={} good={} bad={} rate={:.3}{}\n",
                row.n_cluster, row.good_sentences, row.bad_sentences, row.raw_ratio, chosen
            ));
        }
    }
    prompt.push_str(&format!("\nPredict up to {top_k} cluster numbers: "));
    prompt
}
