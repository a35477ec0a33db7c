//! Shared fixtures for unit tests.

use std::collections::HashMap;

use crate::oracle::{Oracle, ReferenceOracle};
use crate::types::{Corpus, EmbeddingMatrix, Role, SentenceId, SentenceRecord};

/// Well-separated 2-D blobs, one per intent. Intent `i` is gold-labeled
/// `<action_i>-topic<i>` with the action taken from `actions` round-robin,
/// and gold roles alternate with the action list.
pub(crate) fn role_blob_corpus(
    intents: &[(&str, Role)],
    per_intent: usize,
) -> (Corpus, EmbeddingMatrix) {
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (intent, (action, role)) in intents.iter().enumerate() {
        let angle = intent as f64 / intents.len() as f64 * std::f64::consts::TAU;
        let (cx, cy) = (angle.cos() * 100.0, angle.sin() * 100.0);
        for j in 0..per_intent {
            let idx = intent * per_intent + j;
            records.push(SentenceRecord {
                id: SentenceId::new(format!("s{idx:05}")),
                text: format!("utterance {idx} about topic {intent}"),
                gold_label: Some(format!("{action}-topic{intent}")),
                gold_role: Some(*role),
            });
            let dx = ((idx * 37 + 11) % 19) as f64 * 0.05;
            let dy = ((idx * 53 + 7) % 23) as f64 * 0.05;
            rows.push(vec![cx + dx, cy + dy]);
        }
    }
    (
        Corpus::new(records).unwrap(),
        EmbeddingMatrix::from_rows(rows).unwrap(),
    )
}

pub(crate) fn reference_oracles(corpus: &Corpus, purity: f64) -> Vec<Box<dyn Oracle>> {
    let gold: HashMap<String, String> = corpus
        .gold_by_text()
        .into_iter()
        .map(|(t, l)| (t.to_string(), l.to_string()))
        .collect();
    vec![Box::new(ReferenceOracle::new(gold, purity))]
}
