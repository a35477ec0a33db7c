//! Pluggable judgment backends: per-cluster coherence verdicts,
//! Action-Objective naming, crowd majority voting and search-space
//! prediction from iteration logs.
//!
//! The reference backends judge against gold labels and exist for testing
//! and fully offline runs; `remote_chat` talks to a chat-completions
//! endpoint with the bundled prompt templates.

pub mod prompts;
mod remote;

pub use remote::RemoteChatOracle;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{content_hash, derive_rng};
use crate::types::{parse_intent_label, IntentLabel, IterationLog, Verdict};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle backend {backend} unavailable after {attempts} attempts: {reason}")]
    OracleUnavailable {
        backend: String,
        attempts: u32,
        reason: String,
    },
    #[error("unparseable oracle response from {backend}: {raw:?}")]
    UnparseableResponse { backend: String, raw: String },
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error("failed to load asset {path}: {reason}")]
    AssetError { path: String, reason: String },
}

/// A coherence verdict together with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherenceVerdict {
    pub value: Verdict,
    pub backend_id: String,
    pub raw_response: String,
}

impl CoherenceVerdict {
    pub fn new(value: Verdict, backend_id: impl Into<String>, raw: impl Into<String>) -> Self {
        CoherenceVerdict {
            value,
            backend_id: backend_id.into(),
            raw_response: raw.into(),
        }
    }

    pub fn is_good(&self) -> bool {
        self.value == Verdict::Good
    }
}

/// Parses a raw model response into a verdict by exact match of the
/// "Good"/"Bad" tokens (case-insensitive, after trim).
pub fn parse_verdict(raw: &str) -> Option<Verdict> {
    let trimmed = raw.trim().trim_matches(['"', '\'', '.']);
    if trimmed.eq_ignore_ascii_case("good") {
        Some(Verdict::Good)
    } else if trimmed.eq_ignore_ascii_case("bad") {
        Some(Verdict::Bad)
    } else {
        None
    }
}

/// Declarative backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleBackendSpec {
    RemoteChat {
        endpoint: String,
        model_name: String,
        #[serde(default)]
        api_key: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
    },
    Reference {
        #[serde(default = "default_purity")]
        purity_threshold: f64,
    },
    NoisyReference {
        #[serde(default = "default_purity")]
        purity_threshold: f64,
        flip_rate: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_purity() -> f64 {
    1.0
}

impl OracleBackendSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        match self {
            OracleBackendSpec::RemoteChat {
                endpoint,
                model_name,
                ..
            } => {
                if endpoint.is_empty() || model_name.is_empty() {
                    return Err(OracleError::InvalidSpec(
                        "remote_chat requires endpoint and model_name".into(),
                    ));
                }
            }
            OracleBackendSpec::Reference { purity_threshold } => {
                if !(*purity_threshold > 0.0 && *purity_threshold <= 1.0) {
                    return Err(OracleError::InvalidSpec(format!(
                        "purity_threshold must be in (0, 1], got {purity_threshold}"
                    )));
                }
            }
            OracleBackendSpec::NoisyReference {
                purity_threshold,
                flip_rate,
                ..
            } => {
                if !(*purity_threshold > 0.0 && *purity_threshold <= 1.0) {
                    return Err(OracleError::InvalidSpec(format!(
                        "purity_threshold must be in (0, 1], got {purity_threshold}"
                    )));
                }
                if !(*flip_rate >= 0.0 && *flip_rate < 0.5) {
                    return Err(OracleError::InvalidSpec(format!(
                        "flip_rate must be in [0, 0.5), got {flip_rate}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Instantiates the backend. Reference kinds need the gold text->label
    /// map; remote kinds need few-shot assets.
    pub fn build(
        &self,
        gold: &HashMap<String, String>,
        assets: &prompts::FewShotAssets,
    ) -> Result<Box<dyn Oracle>, OracleError> {
        self.validate()?;
        Ok(match self {
            OracleBackendSpec::Reference { purity_threshold } => Box::new(ReferenceOracle::new(
                gold.clone(),
                *purity_threshold,
            )),
            OracleBackendSpec::NoisyReference {
                purity_threshold,
                flip_rate,
                seed,
            } => Box::new(NoisyReferenceOracle::new(
                ReferenceOracle::new(gold.clone(), *purity_threshold),
                *flip_rate,
                *seed,
            )),
            OracleBackendSpec::RemoteChat {
                endpoint,
                model_name,
                api_key,
                timeout_ms,
                max_retries,
            } => Box::new(RemoteChatOracle::new(
                endpoint.clone(),
                model_name.clone(),
                api_key
                    .clone()
                    .or_else(|| std::env::var("ORACLE_API_KEY").ok()),
                *timeout_ms,
                *max_retries,
                assets.clone(),
            )?),
        })
    }
}

/// A judgment backend. Implementations must be safe for concurrent calls.
pub trait Oracle: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Binary coherence judgment over the sampled sentences of one cluster.
    fn evaluate_coherence(&self, sentences: &[String]) -> Result<CoherenceVerdict, OracleError>;

    /// Action-Objective name for one cluster. Backends fall back to
    /// `unknown-unknown` when a well-formed label cannot be obtained.
    fn name_cluster(&self, sentences: &[String]) -> Result<IntentLabel, OracleError>;

    /// Promising cluster counts for the next iteration, derived from logs.
    fn predict_search_space(
        &self,
        logs: &[IterationLog],
        top_k: usize,
    ) -> Result<Vec<usize>, OracleError> {
        Ok(extrapolate_search_space(logs, top_k))
    }
}

/// Judges coherence by gold-label purity: Good iff the modal-label fraction
/// over the sampled sentences reaches the threshold. Sentences without a
/// gold label never match anything.
pub struct ReferenceOracle {
    gold: HashMap<String, String>,
    purity_threshold: f64,
    id: String,
}

impl ReferenceOracle {
    pub fn new(gold: HashMap<String, String>, purity_threshold: f64) -> Self {
        ReferenceOracle {
            gold,
            purity_threshold,
            id: "reference".to_string(),
        }
    }

    fn purity(&self, sentences: &[String]) -> f64 {
        if sentences.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            if let Some(label) = self.gold.get(s) {
                *counts.entry(label.as_str()).or_insert(0) += 1;
            }
        }
        let modal = counts.values().copied().max().unwrap_or(0);
        modal as f64 / sentences.len() as f64
    }

    fn modal_label(&self, sentences: &[String]) -> Option<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            if let Some(label) = self.gold.get(s) {
                *counts.entry(label.as_str()).or_insert(0) += 1;
            }
        }
        counts
            .into_iter()
            .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(lb.cmp(la)))
            .map(|(label, _)| label.to_string())
    }
}

impl Oracle for ReferenceOracle {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn evaluate_coherence(&self, sentences: &[String]) -> Result<CoherenceVerdict, OracleError> {
        let purity = self.purity(sentences);
        let value = if purity >= self.purity_threshold {
            Verdict::Good
        } else {
            Verdict::Bad
        };
        Ok(CoherenceVerdict::new(
            value,
            &self.id,
            format!("purity={purity:.4}"),
        ))
    }

    fn name_cluster(&self, sentences: &[String]) -> Result<IntentLabel, OracleError> {
        match self.modal_label(sentences) {
            Some(label) => Ok(parse_intent_label(&label).unwrap_or_else(|_| IntentLabel::unknown())),
            None => Ok(IntentLabel::unknown()),
        }
    }
}

/// Reference oracle whose verdict is flipped with a fixed probability. The
/// flip decision is a pure function of (seed, input sentences), so repeated
/// calls on the same input agree and distinct seeds flip independently.
pub struct NoisyReferenceOracle {
    inner: ReferenceOracle,
    flip_rate: f64,
    seed: u64,
    id: String,
}

impl NoisyReferenceOracle {
    pub fn new(inner: ReferenceOracle, flip_rate: f64, seed: u64) -> Self {
        NoisyReferenceOracle {
            inner,
            flip_rate,
            seed,
            id: format!("noisy-reference:{seed}"),
        }
    }
}

impl Oracle for NoisyReferenceOracle {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn evaluate_coherence(&self, sentences: &[String]) -> Result<CoherenceVerdict, OracleError> {
        let verdict = self.inner.evaluate_coherence(sentences)?;
        let call_hash = content_hash(sentences.iter().map(|s| s.as_bytes()));
        let mut rng = derive_rng(self.seed, "noisy-flip", call_hash);
        let flip = rng.gen_range(0.0..1.0) < self.flip_rate;
        let value = match (verdict.value, flip) {
            (v, false) => v,
            (Verdict::Good, true) => Verdict::Bad,
            (Verdict::Bad, true) => Verdict::Good,
        };
        Ok(CoherenceVerdict::new(
            value,
            &self.id,
            format!("{} flipped={flip}", verdict.raw_response),
        ))
    }

    fn name_cluster(&self, sentences: &[String]) -> Result<IntentLabel, OracleError> {
        self.inner.name_cluster(sentences)
    }
}

/// Majority vote over verdicts; ties resolve to Bad so a questioned cluster
/// re-enters refinement.
pub fn crowd_vote(verdicts: &[CoherenceVerdict]) -> CoherenceVerdict {
    debug_assert!(!verdicts.is_empty(), "crowd_vote requires >= 1 verdict");
    let good = verdicts.iter().filter(|v| v.is_good()).count();
    let bad = verdicts.len() - good;
    let value = if good > bad { Verdict::Good } else { Verdict::Bad };
    CoherenceVerdict::new(
        value,
        format!("crowd({})", verdicts.len()),
        format!("good={good} bad={bad}"),
    )
}

/// Deterministic search-space heuristic: continue the chosen-n trend
/// geometrically and bracket the extrapolation.
///
/// With chosen counts `.., prev, last` the trend ratio is `last/prev`
/// (halving when only one epoch exists). The candidates, best first, are
/// the extrapolation `e`, its chain neighbors `e*r` and `e/r`, and the two
/// midpoints toward `e`.
pub fn extrapolate_search_space(logs: &[IterationLog], top_k: usize) -> Vec<usize> {
    if logs.is_empty() || top_k == 0 {
        return Vec::new();
    }
    let chosen: Vec<f64> = logs.iter().map(|l| l.chosen_n as f64).collect();
    let last = *chosen.last().unwrap();
    let ratio = if chosen.len() >= 2 {
        let prev = chosen[chosen.len() - 2];
        let r = last / prev;
        if r.is_finite() && r > 0.0 {
            r
        } else {
            0.5
        }
    } else {
        0.5
    };
    let extrapolated = (last * ratio).round().max(1.0);
    let raw = [
        extrapolated,
        extrapolated * ratio,
        extrapolated / ratio,
        (extrapolated + extrapolated / ratio) / 2.0,
        (extrapolated * ratio + extrapolated) / 2.0,
    ];
    let mut out: Vec<usize> = Vec::with_capacity(top_k);
    for v in raw {
        let candidate = v.round().max(1.0) as usize;
        if !out.contains(&candidate) {
            out.push(candidate);
        }
        if out.len() == top_k {
            break;
        }
    }
    out
}

/// Parses up to `top_k` distinct positive integers from free-form text.
pub fn parse_predicted_counts(raw: &str, top_k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for token in raw.split(|c: char| !c.is_ascii_digit()) {
        if token.is_empty() {
            continue;
        }
        if let Ok(v) = token.parse::<usize>() {
            if v >= 1 && !out.contains(&v) {
                out.push(v);
            }
            if out.len() == top_k {
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CandidateRow;

    fn gold(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs
            .iter()
            .map(|(t, l)| (t.to_string(), l.to_string()))
            .collect()
    }

    fn sentences(texts: &[&str]) -> Vec<String> {
        texts.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn reference_oracle_purity_examples() {
        let oracle = ReferenceOracle::new(
            gold(&[
                ("a", "inquire-insurance"),
                ("b", "inquire-insurance"),
                ("c", "answer-amount"),
                ("d", "answer-amount"),
            ]),
            1.0,
        );
        let verdict = oracle.evaluate_coherence(&sentences(&["a", "b"])).unwrap();
        assert_eq!(verdict.value, Verdict::Good);

        let verdict = oracle
            .evaluate_coherence(&sentences(&["a", "b", "c", "d"]))
            .unwrap();
        assert_eq!(verdict.value, Verdict::Bad);

        // Unlabeled sentences count against purity.
        let verdict = oracle
            .evaluate_coherence(&sentences(&["a", "unlabeled"]))
            .unwrap();
        assert_eq!(verdict.value, Verdict::Bad);
    }

    #[test]
    fn reference_oracle_threshold_below_one() {
        let oracle = ReferenceOracle::new(
            gold(&[("a", "x-y"), ("b", "x-y"), ("c", "x-y"), ("d", "w-z")]),
            0.75,
        );
        let verdict = oracle
            .evaluate_coherence(&sentences(&["a", "b", "c", "d"]))
            .unwrap();
        assert_eq!(verdict.value, Verdict::Good);
    }

    #[test]
    fn reference_naming_uses_modal_label() {
        let oracle = ReferenceOracle::new(
            gold(&[
                ("a", "inquire-promotion"),
                ("b", "inquire-promotion"),
                ("c", "answer-amount"),
            ]),
            1.0,
        );
        let label = oracle.name_cluster(&sentences(&["a", "b", "c"])).unwrap();
        assert_eq!(label.canonical(), "inquire-promotion");

        let label = oracle.name_cluster(&sentences(&["c"])).unwrap();
        assert_eq!(label.canonical(), "answer-amount");

        // No gold labels at all: fall back to unknown-unknown.
        let label = oracle.name_cluster(&sentences(&["nope"])).unwrap();
        assert_eq!(label.canonical(), "unknown-unknown");

        // Malformed gold label: same fallback.
        let oracle = ReferenceOracle::new(gold(&[("a", "notwopart")]), 1.0);
        let label = oracle.name_cluster(&sentences(&["a"])).unwrap();
        assert_eq!(label.canonical(), "unknown-unknown");
    }

    #[test]
    fn noisy_reference_zero_flip_equals_reference() {
        let g = gold(&[("a", "x-y"), ("b", "x-y"), ("c", "z-w")]);
        let reference = ReferenceOracle::new(g.clone(), 1.0);
        let noisy = NoisyReferenceOracle::new(ReferenceOracle::new(g, 1.0), 0.0, 7);
        for input in [&["a", "b"][..], &["a", "c"][..], &["c"][..]] {
            let s = sentences(input);
            assert_eq!(
                reference.evaluate_coherence(&s).unwrap().value,
                noisy.evaluate_coherence(&s).unwrap().value
            );
        }
    }

    #[test]
    fn noisy_reference_is_deterministic_per_seed() {
        let g = gold(&[("a", "x-y")]);
        let noisy = NoisyReferenceOracle::new(ReferenceOracle::new(g.clone(), 1.0), 0.4, 11);
        let inputs: Vec<Vec<String>> = (0..50)
            .map(|i| vec![format!("a"), format!("filler {i}")])
            .collect();
        let first: Vec<Verdict> = inputs
            .iter()
            .map(|s| noisy.evaluate_coherence(s).unwrap().value)
            .collect();
        let second: Vec<Verdict> = inputs
            .iter()
            .map(|s| noisy.evaluate_coherence(s).unwrap().value)
            .collect();
        assert_eq!(first, second);

        // A different seed should flip a different subset.
        let other = NoisyReferenceOracle::new(ReferenceOracle::new(g, 1.0), 0.4, 12);
        let third: Vec<Verdict> = inputs
            .iter()
            .map(|s| other.evaluate_coherence(s).unwrap().value)
            .collect();
        assert_ne!(first, third);
    }

    #[test]
    fn crowd_vote_examples() {
        let v = |value| CoherenceVerdict::new(value, "b", "");
        let good = v(Verdict::Good);
        let bad = v(Verdict::Bad);

        assert_eq!(
            crowd_vote(&[good.clone(), good.clone(), bad.clone()]).value,
            Verdict::Good
        );
        // Documented tie rule.
        assert_eq!(crowd_vote(&[good.clone(), bad.clone()]).value, Verdict::Bad);
        assert_eq!(crowd_vote(std::slice::from_ref(&bad)).value, Verdict::Bad);

        // Permutation invariance.
        assert_eq!(
            crowd_vote(&[bad.clone(), good.clone(), good.clone()]).value,
            Verdict::Good
        );
        // Idempotent on unanimous inputs.
        assert_eq!(
            crowd_vote(&[good.clone(), good.clone(), good]).value,
            Verdict::Good
        );
    }

    /// Measured crowd error stays within the binomial tail bound plus three
    /// standard errors.
    #[test]
    fn crowd_reduces_noise_to_binomial_tail() {
        let flip_rate = 0.1;
        let crowd_size = 5usize;
        let n_clusters = 1000usize;
        let g = gold(&[("t", "x-y")]);

        let crowd: Vec<NoisyReferenceOracle> = (0..crowd_size)
            .map(|i| {
                NoisyReferenceOracle::new(
                    ReferenceOracle::new(g.clone(), 1.0),
                    flip_rate,
                    1000 + i as u64,
                )
            })
            .collect();

        let mut errors = 0usize;
        for i in 0..n_clusters {
            let input = vec!["t".to_string(), format!("probe {i}")];
            // Truth: purity 0.5 < 1.0, so the clean verdict is Bad.
            let verdicts: Vec<CoherenceVerdict> = crowd
                .iter()
                .map(|o| o.evaluate_coherence(&input).unwrap())
                .collect();
            if crowd_vote(&verdicts).value != Verdict::Bad {
                errors += 1;
            }
        }
        let measured = errors as f64 / n_clusters as f64;
        // P(>= 3 of 5 flips) at f = 0.1.
        let tail = 10.0 * 0.001 * 0.81 + 5.0 * 0.0001 * 0.9 + 0.00001;
        let se = (tail * (1.0 - tail) / n_clusters as f64).sqrt();
        assert!(
            measured <= tail + 3.0 * se,
            "measured {measured} > bound {}",
            tail + 3.0 * se
        );
    }

    #[test]
    fn parse_verdict_round_trips() {
        for raw in ["Good", " good ", "BAD", "\"Good\"", "bad."] {
            let v = parse_verdict(raw).unwrap();
            assert!(matches!(v, Verdict::Good | Verdict::Bad));
            assert!(["Good", "Bad"].contains(&v.to_string().as_str()));
        }
        assert!(parse_verdict("excellent").is_none());
        assert!(parse_verdict("").is_none());
    }

    fn log_with_chosen(epoch: u32, chosen_n: usize) -> IterationLog {
        IterationLog {
            epoch,
            rows: vec![CandidateRow::new(chosen_n, chosen_n as u64, 0, 100, 0)],
            chosen_n,
            oracle_calls: chosen_n as u64,
        }
    }

    #[test]
    fn search_space_extrapolation_rule() {
        // Two epochs 1600 -> 800: ratio 0.5, extrapolation 400, brackets
        // 200 and 800, midpoints 600 and 300.
        let logs = vec![log_with_chosen(0, 1600), log_with_chosen(1, 800)];
        assert_eq!(
            extrapolate_search_space(&logs, 5),
            vec![400, 200, 800, 600, 300]
        );

        // Single epoch: halving default, same bracket construction.
        let logs = vec![log_with_chosen(0, 1600)];
        assert_eq!(
            extrapolate_search_space(&logs, 5),
            vec![800, 400, 1600, 1200, 600]
        );

        // Truncation to top_k.
        let logs = vec![log_with_chosen(0, 1600), log_with_chosen(1, 800)];
        assert_eq!(extrapolate_search_space(&logs, 1), vec![400]);

        // Flat trend collapses to fewer distinct candidates.
        let logs = vec![log_with_chosen(0, 100), log_with_chosen(1, 100)];
        assert_eq!(extrapolate_search_space(&logs, 5), vec![100]);
    }

    #[test]
    fn predicted_count_parsing() {
        assert_eq!(parse_predicted_counts("400, 200, 800", 5), vec![400, 200, 800]);
        assert_eq!(
            parse_predicted_counts("best: 400; then 200 and 400 again", 5),
            vec![400, 200]
        );
        assert_eq!(parse_predicted_counts("1, 2, 3, 4, 5, 6", 3), vec![1, 2, 3]);
        assert!(parse_predicted_counts("no numbers here", 3).is_empty());
    }

    #[test]
    fn backend_spec_validation() {
        assert!(OracleBackendSpec::Reference {
            purity_threshold: 0.0
        }
        .validate()
        .is_err());
        assert!(OracleBackendSpec::NoisyReference {
            purity_threshold: 1.0,
            flip_rate: 0.5,
            seed: 0
        }
        .validate()
        .is_err());
        assert!(OracleBackendSpec::RemoteChat {
            endpoint: String::new(),
            model_name: "m".into(),
            api_key: None,
            timeout_ms: 1000,
            max_retries: 1
        }
        .validate()
        .is_err());
        assert!(OracleBackendSpec::Reference {
            purity_threshold: 0.9
        }
        .validate()
        .is_ok());
    }
}
