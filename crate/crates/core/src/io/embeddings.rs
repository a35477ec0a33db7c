//! Binary embedding matrix format and the remote embeddings client.
//!
//! Format: 8-byte magic "EMBMAT01", u32 row count, u32 dimension (both
//! little-endian), then row-major f32 little-endian payload.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::{EmbeddingMatrix, SentenceRecord};

use super::config::EmbeddingSource;
use super::IoError;

const MAGIC: &[u8; 8] = b"EMBMAT01";
const FETCH_BATCH: usize = 64;

pub fn save_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<(), IoError> {
    let mut file = std::fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut buf = Vec::with_capacity(16 + matrix.n_rows() * matrix.dim() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(matrix.n_rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    for row in matrix.rows() {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| IoError::file(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, IoError> {
    let bad = |reason: &str| IoError::BadEmbeddingFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut file = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| IoError::file(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing or wrong magic"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + n * dim * 4;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let mut row = Vec::with_capacity(dim);
        for c in 0..dim {
            let off = 16 + (r * dim + c) * 4;
            row.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
        }
        rows.push(row);
    }
    EmbeddingMatrix::from_rows(rows).map_err(|e| bad(&e.to_string()))
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    input: Vec<&'a str>,
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

/// Fetches embeddings for `texts` in batches of at most 64, reassembling
/// rows by the response's index field (responses may permute items).
pub fn fetch_embeddings(
    texts: &[&str],
    endpoint: &str,
    model: &str,
    api_key: Option<&str>,
    max_retries: u32,
) -> Result<EmbeddingMatrix, IoError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| IoError::InvalidConfig(format!("http client: {e}")))?;

    let mut rows: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
    for (batch_idx, batch) in texts.chunks(FETCH_BATCH).enumerate() {
        let offset = batch_idx * FETCH_BATCH;
        let request = EmbeddingsRequest {
            input: batch.to_vec(),
            model,
        };
        let mut last_error = String::new();
        let mut done = false;
        for attempt in 0..=max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500) * 2u32.pow(attempt - 1));
            }
            let mut builder = client.post(endpoint).json(&request);
            if let Some(key) = api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(response) if response.status().is_success() => {
                    let parsed: EmbeddingsResponse =
                        response
                            .json()
                            .map_err(|e| IoError::EndpointUnavailable {
                                attempts: attempt + 1,
                                reason: format!("invalid response body: {e}"),
                            })?;
                    if parsed.data.len() != batch.len() {
                        return Err(IoError::ShapeMismatch {
                            rows: parsed.data.len(),
                            expected: batch.len(),
                        });
                    }
                    for item in parsed.data {
                        if item.index >= batch.len() {
                            return Err(IoError::EndpointUnavailable {
                                attempts: attempt + 1,
                                reason: format!("index {} out of batch range", item.index),
                            });
                        }
                        rows[offset + item.index] = Some(item.embedding);
                    }
                    done = true;
                    break;
                }
                Ok(response) => last_error = format!("http status {}", response.status()),
                Err(e) => last_error = e.to_string(),
            }
        }
        if !done {
            return Err(IoError::EndpointUnavailable {
                attempts: max_retries + 1,
                reason: last_error,
            });
        }
    }
    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| IoError::EndpointUnavailable {
                attempts: max_retries + 1,
                reason: format!("row {i} missing from responses"),
            })
        })
        .collect::<Result<_, _>>()?;
    EmbeddingMatrix::from_rows(rows).map_err(|e| IoError::InvalidConfig(e.to_string()))
}

/// Cache path keyed by the corpus content and model.
pub fn cache_path(dir: &Path, records: &[SentenceRecord], model: &str) -> PathBuf {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    for record in records {
        hasher.update((record.text.len() as u64).to_le_bytes());
        hasher.update(record.text.as_bytes());
    }
    let digest = hasher.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("embeddings-{hex}.bin"))
}

/// Resolves the configured embedding source to a row-normalized matrix
/// aligned with `records`. Remote fetches are cached in `cache_dir` under a
/// corpus-content key.
pub fn load_or_fetch_embeddings(
    records: &[SentenceRecord],
    source: &EmbeddingSource,
    cache_dir: &Path,
) -> Result<EmbeddingMatrix, IoError> {
    let mut matrix = match source {
        EmbeddingSource::File { path } => load_embeddings(path)?,
        EmbeddingSource::Remote {
            endpoint,
            model,
            api_key,
        } => {
            let cached = cache_path(cache_dir, records, model);
            if cached.is_file() {
                log::info!("using cached embeddings {}", cached.display());
                load_embeddings(&cached)?
            } else {
                let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
                let key = api_key
                    .clone()
                    .or_else(|| std::env::var("EMBED_API_KEY").ok());
                let matrix = fetch_embeddings(&texts, endpoint, model, key.as_deref(), 3)?;
                std::fs::create_dir_all(cache_dir).map_err(|e| IoError::file(cache_dir, e))?;
                save_embeddings(&cached, &matrix)?;
                matrix
            }
        }
    };
    if matrix.n_rows() != records.len() {
        return Err(IoError::ShapeMismatch {
            rows: matrix.n_rows(),
            expected: records.len(),
        });
    }
    matrix.l2_normalize();
    Ok(matrix)
}
