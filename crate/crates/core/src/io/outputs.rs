//! Run artifacts: clusters.jsonl, iterations.csv and report.json.
//!
//! Field order and number formatting are fixed so identical runs produce
//! byte-identical files.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::Report;
use crate::types::{Cluster, ClusterAssignment, IntentLabel, IterationLog, Role, SentenceId, Verdict};

use super::IoError;

/// One line of clusters.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: usize,
    pub label: Option<String>,
    pub role: Option<Role>,
    pub verdict: Option<Verdict>,
    pub low_confidence: bool,
    pub member_ids: Vec<SentenceId>,
}

pub fn write_clusters_jsonl(path: &Path, assignment: &ClusterAssignment) -> Result<(), IoError> {
    let mut out = String::new();
    for (cluster_id, cluster) in assignment.clusters.iter().enumerate() {
        let record = ClusterRecord {
            cluster_id,
            label: cluster.label.as_ref().map(|l| l.canonical()),
            role: cluster.role,
            verdict: cluster.verdict,
            low_confidence: cluster.low_confidence,
            member_ids: cluster.member_ids.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("cluster record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| IoError::file(path, e))
}

pub fn read_clusters_jsonl(path: &Path) -> Result<ClusterAssignment, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut clusters = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClusterRecord =
            serde_json::from_str(&line).map_err(|e| IoError::ParseError {
                path: path.display().to_string(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        let mut cluster = Cluster::new(record.member_ids).map_err(|e| IoError::ParseError {
            path: path.display().to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        cluster.label = record.label.map(|raw| {
            crate::types::parse_intent_label(&raw).unwrap_or_else(|_| IntentLabel::unknown())
        });
        cluster.role = record.role;
        cluster.verdict = record.verdict;
        cluster.low_confidence = record.low_confidence;
        clusters.push(cluster);
    }
    ClusterAssignment::new(clusters, 0).map_err(|e| IoError::ParseError {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })
}

/// Fixed column order mirroring the iteration log table.
const CSV_HEADER: &str =
    "epoch,n_cluster,good_clusters,bad_clusters,good_sentences,bad_sentences,raw_ratio,smoothed_ratio,chosen";

fn format_ratio(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_iterations_csv(path: &Path, logs: &[IterationLog]) -> Result<(), IoError> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for log in logs {
        for row in &log.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                log.epoch,
                row.n_cluster,
                row.good_clusters,
                row.bad_clusters,
                row.good_sentences,
                row.bad_sentences,
                format_ratio(row.raw_ratio),
                format_ratio(row.smoothed_ratio),
                row.n_cluster == log.chosen_n
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| IoError::file(path, e))
}

/// Reads back an exported iterations.csv. The cumulative oracle-call
/// counter is not stored in the CSV and is reconstructed as the running sum
/// of evaluated cluster counts.
pub fn read_iterations_csv(path: &Path) -> Result<Vec<IterationLog>, IoError> {
    use crate::types::CandidateRow;
    let parse_err = |line: usize, reason: String| IoError::ParseError {
        path: path.display().to_string(),
        line,
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => return Err(parse_err(1, "missing or wrong header".into())),
    }
    let mut logs: Vec<IterationLog> = Vec::new();
    let mut cumulative = 0u64;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(parse_err(idx + 1, format!("expected 9 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<u64, IoError> {
            fields[i]
                .parse()
                .map_err(|e| parse_err(idx + 1, format!("field {i}: {e}")))
        };
        let epoch = num(0)? as u32;
        let n_cluster = num(1)? as usize;
        let row = CandidateRow::new(n_cluster, num(2)?, num(3)?, num(4)?, num(5)?);
        let chosen = fields[8] == "true";
        cumulative += n_cluster as u64;
        match logs.last_mut() {
            Some(log) if log.epoch == epoch => {
                log.rows.push(row);
                log.oracle_calls = cumulative;
                if chosen {
                    log.chosen_n = n_cluster;
                }
            }
            _ => logs.push(IterationLog {
                epoch,
                rows: vec![row],
                chosen_n: if chosen { n_cluster } else { 0 },
                oracle_calls: cumulative,
            }),
        }
    }
    Ok(logs)
}

pub fn write_report_json(path: &Path, report: &Report) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::file(path, e))
}
