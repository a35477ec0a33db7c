//! JSONL corpus ingestion.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use crate::types::SentenceRecord;

use super::IoError;

/// Loads a JSONL corpus (one `{id, text, gold_label?, gold_role?}` object
/// per line). Records are deduplicated by exact text match: duplicates keep
/// the first id and the dropped count is logged.
pub fn load_corpus(path: &Path) -> Result<Vec<SentenceRecord>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let reader = std::io::BufReader::new(file);

    let mut records: Vec<SentenceRecord> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut seen_texts: HashMap<String, usize> = HashMap::new();
    let mut duplicates = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord =
            serde_json::from_str(&line).map_err(|e| IoError::ParseError {
                path: path.display().to_string(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.text.trim().is_empty() {
            return Err(IoError::ParseError {
                path: path.display().to_string(),
                line: line_no,
                reason: "text is empty after trimming".into(),
            });
        }
        if !seen_ids.insert(record.id.to_string()) {
            return Err(IoError::DuplicateId {
                path: path.display().to_string(),
                line: line_no,
                id: record.id.to_string(),
            });
        }
        if seen_texts.contains_key(&record.text) {
            duplicates += 1;
            continue;
        }
        seen_texts.insert(record.text.clone(), records.len());
        records.push(record);
    }
    if duplicates > 0 {
        log::info!(
            "{}: dropped {duplicates} duplicate-text sentences, kept first ids",
            path.display()
        );
    }
    Ok(records)
}
