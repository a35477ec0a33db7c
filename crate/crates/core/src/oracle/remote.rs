//! Chat-completions backend over JSON/HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::{self, FewShotAssets};
use super::{
    extrapolate_search_space, parse_predicted_counts, parse_verdict, CoherenceVerdict, Oracle,
    OracleError,
};
use crate::types::{parse_intent_label, IntentLabel, IterationLog};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Talks to a chat-completions-style endpoint: request
/// `{model, messages, temperature: 0}`, response parsed from the first
/// choice's message content. Unavailable endpoints are retried with
/// exponential backoff starting at 500 ms.
pub struct RemoteChatOracle {
    endpoint: String,
    model_name: String,
    api_key: Option<String>,
    max_retries: u32,
    assets: FewShotAssets,
    client: reqwest::blocking::Client,
    id: String,
    backoff_base: Duration,
}

impl RemoteChatOracle {
    pub fn new(
        endpoint: String,
        model_name: String,
        api_key: Option<String>,
        timeout_ms: u64,
        max_retries: u32,
        assets: FewShotAssets,
    ) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| OracleError::InvalidSpec(format!("http client: {e}")))?;
        let id = format!("remote:{model_name}");
        Ok(RemoteChatOracle {
            endpoint,
            model_name,
            api_key,
            max_retries,
            assets,
            client,
            id,
            backoff_base: Duration::from_millis(500),
        })
    }

    #[cfg(test)]
    pub(crate) fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    /// One prompt round-trip with availability retries.
    fn complete(&self, prompt: &str) -> Result<String, OracleError> {
        let request = ChatRequest {
            model: &self.model_name,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            let mut builder = self.client.post(&self.endpoint).json(&request);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(response) if response.status().is_success() => {
                    let parsed: ChatResponse =
                        response.json().map_err(|e| OracleError::UnparseableResponse {
                            backend: self.id.clone(),
                            raw: format!("invalid response body: {e}"),
                        })?;
                    return parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| OracleError::UnparseableResponse {
                            backend: self.id.clone(),
                            raw: "response has no choices".into(),
                        });
                }
                Ok(response) => {
                    last_error = format!("http status {}", response.status());
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(OracleError::OracleUnavailable {
            backend: self.id.clone(),
            attempts: self.max_retries + 1,
            reason: last_error,
        })
    }
}

impl Oracle for RemoteChatOracle {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn evaluate_coherence(&self, sentences: &[String]) -> Result<CoherenceVerdict, OracleError> {
        let prompt = prompts::coherence_prompt(&self.assets.coherence, sentences);
        let raw = self.complete(&prompt)?;
        if let Some(value) = parse_verdict(&raw) {
            return Ok(CoherenceVerdict::new(value, &self.id, raw));
        }
        // One re-ask before giving up on the response format.
        log::warn!("unparseable coherence response {raw:?}; re-asking once");
        let raw = self.complete(&prompt)?;
        match parse_verdict(&raw) {
            Some(value) => Ok(CoherenceVerdict::new(value, &self.id, raw)),
            None => Err(OracleError::UnparseableResponse {
                backend: self.id.clone(),
                raw,
            }),
        }
    }

    fn name_cluster(&self, sentences: &[String]) -> Result<IntentLabel, OracleError> {
        let prompt = prompts::naming_prompt(&self.assets.naming, sentences);
        let raw = self.complete(&prompt)?;
        if let Ok(label) = parse_intent_label(&raw) {
            return Ok(label);
        }
        log::warn!("malformed label {raw:?}; re-asking once");
        let raw = self.complete(&prompt)?;
        Ok(parse_intent_label(&raw).unwrap_or_else(|_| IntentLabel::unknown()))
    }

    fn predict_search_space(
        &self,
        logs: &[IterationLog],
        top_k: usize,
    ) -> Result<Vec<usize>, OracleError> {
        let prompt = prompts::search_space_prompt(logs, top_k);
        let predicted = match self.complete(&prompt) {
            Ok(raw) => parse_predicted_counts(&raw, top_k),
            Err(OracleError::UnparseableResponse { .. }) => Vec::new(),
            Err(other) => return Err(other),
        };
        if predicted.is_empty() {
            // Unusable prediction: fall back to the trend heuristic.
            Ok(extrapolate_search_space(logs, top_k))
        } else {
            Ok(predicted)
        }
    }
}
