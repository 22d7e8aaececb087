//! Embedding and reranking interfaces.
//!
//! The default embedder hashes character trigrams into a fixed-dimension
//! L2-normalized vector; it is fully deterministic and needs no model
//! server, which keeps retrieval oracle tests hermetic. A production
//! deployment can swap in [`HttpEmbedder`] against an `/embeddings`
//! endpoint without touching the pipeline.

use crate::client::BackendConfig;
use serde::Deserialize;
use serde_json::json;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedding backend error: {0}")]
    Backend(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("reranker error: {0}")]
pub struct RerankError(pub String);

/// Text-to-vector interface. Implementations must be deterministic for a
/// fixed input text.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Query/candidate cross-scoring interface. Scores must be finite.
pub trait Reranker: Send + Sync {
    fn rerank_score(&self, query_text: &str, candidate_text: &str) -> Result<f64, RerankError>;
}

/// Cosine similarity in f64, with the zero vector defined to have
/// similarity 0 so degenerate embeddings cannot poison a ranking with NaN.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Deterministic feature-hashing embedder over character trigrams.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

const HASH_EMBED_SEED: u64 = 0x7061_7374_6578_7031;

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut acc = vec![0.0f32; self.dim];
        let chars: Vec<char> = text.chars().collect();
        let mut feed = |gram: &str| {
            let h = crate::util::hash64(HASH_EMBED_SEED, gram.as_bytes());
            let idx = ((h >> 1) % self.dim as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            acc[idx] += sign;
        };
        if chars.len() < 3 {
            if !chars.is_empty() {
                feed(text);
            }
        } else {
            let mut gram = String::with_capacity(12);
            for window in chars.windows(3) {
                gram.clear();
                gram.extend(window.iter());
                feed(&gram);
            }
        }
        let norm: f64 = acc.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut acc {
                *v = (*v as f64 / norm) as f32;
            }
        }
        Ok(acc)
    }
}

/// Reranker that scores a pair by cosine similarity of its embeddings.
pub struct CosineReranker {
    embedder: Arc<dyn Embedder>,
}

impl CosineReranker {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self { embedder }
    }
}

impl Reranker for CosineReranker {
    fn rerank_score(&self, query_text: &str, candidate_text: &str) -> Result<f64, RerankError> {
        let q = self
            .embedder
            .embed(query_text)
            .map_err(|e| RerankError(e.to_string()))?;
        let c = self
            .embedder
            .embed(candidate_text)
            .map_err(|e| RerankError(e.to_string()))?;
        Ok(cosine(&q, &c))
    }
}

/// Embedder backed by an OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    config: BackendConfig,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(config: BackendConfig, dim: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Self { config, dim, agent }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let url = format!(
            "{}/embeddings",
            self.config.endpoint_url.trim_end_matches('/')
        );
        let body = json!({ "model": self.config.model_name, "input": [text] });
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| EmbedError::Backend(e.to_string()))?;
        let parsed: EmbeddingsResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Backend(format!("malformed embeddings body: {e}")))?;
        let row = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Backend("embeddings response has no data".into()))?;
        if row.embedding.len() != self.dim {
            return Err(EmbedError::Dimension {
                expected: self.dim,
                got: row.embedding.len(),
            });
        }
        Ok(row.embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic_and_normalized() {
        let e = HashEmbedder::new(64);
        let a = e.embed("persistent dry cough for three weeks").unwrap();
        let b = e.embed("persistent dry cough for three weeks").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-3);
    }

    #[test]
    fn distinct_texts_get_distinct_vectors() {
        let e = HashEmbedder::new(64);
        assert_ne!(
            e.embed("chest pain").unwrap(),
            e.embed("ankle sprain").unwrap()
        );
    }

    #[test]
    fn empty_text_embeds_to_zero_vector() {
        let e = HashEmbedder::new(16);
        let v = e.embed("").unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(cosine(&v, &v), 0.0);
    }

    #[test]
    fn cosine_of_identical_unit_vectors_is_one() {
        let v = vec![0.6f32, 0.8];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_reranker_prefers_similar_text() {
        let embedder: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(128));
        let reranker = CosineReranker::new(embedder);
        let near = reranker
            .rerank_score("persistent dry cough", "persistent dry cough at night")
            .unwrap();
        let far = reranker
            .rerank_score("persistent dry cough", "broken wrist after a fall")
            .unwrap();
        assert!(near > far);
    }
}
