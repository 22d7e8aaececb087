//! Reward- and novelty-filtered experience repository.
//!
//! High-reward (state, action, reward) tuples from past rollouts are kept
//! in an append-only store and served through a three-stage retrieval
//! pipeline:
//!
//! 1. **Candidate selection**: every stored tuple is scored by cosine
//!    similarity to the query plus the reward weighted by `alpha`; the top
//!    `top_n` survive.
//! 2. **Reranking**: a cross-scoring model reorders the candidates by
//!    query/state relevance (stable on ties).
//! 3. **Novelty and reward filtering**: candidates too similar to the
//!    query (similarity at or above `tau_novelty`) or not strictly above
//!    the dynamic reward threshold `mean + beta_std * std` over the
//!    candidate set are dropped, preserving rerank order.
//!
//! The final context is truncated to `top_k`. Storage is gated separately:
//! only tuples whose reward meets or exceeds `tau_reward` are ever stored.

pub mod embed;
mod store;

pub use embed::{
    cosine, CosineReranker, EmbedError, Embedder, HashEmbedder, HttpEmbedder, RerankError, Reranker,
};
pub use store::{StoreError, LOG_FILE, SIDECAR_FILE};

use crate::client::{RetrievedContext, RetrievedExperience};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::{Arc, RwLock};
use thiserror::Error;

/// One stored rollout step: the dialogue state the policy saw, the action
/// it took, the process reward that action earned, and the state embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceTuple {
    pub id: u64,
    pub state_text: String,
    pub action_text: String,
    pub reward: f64,
    pub embedding: Vec<f32>,
}

/// A tuple awaiting storage; the repository embeds it on commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewExperience {
    pub state_text: String,
    pub action_text: String,
    pub reward: f64,
}

/// Retrieval pipeline constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Reward coefficient in the combined candidate score.
    pub alpha: f64,
    /// Candidate pool size after stage 1.
    pub top_n: usize,
    /// Final context size after stage 3.
    pub top_k: usize,
    /// Similarity at or above this is "not novel" and is dropped.
    pub tau_novelty: f64,
    /// Spread multiplier in the dynamic reward threshold.
    pub beta_std: f64,
    /// Storage gate: only rewards at or above this are stored.
    pub tau_reward: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            top_n: 30,
            top_k: 2,
            tau_novelty: 0.98,
            beta_std: 0.5,
            tau_reward: 0.7,
        }
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query has dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dynamic threshold of an empty candidate set")]
    EmptyCandidates,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

/// A pipeline candidate with its scores attached for logging and audit.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tuple: ExperienceTuple,
    pub combined_score: f64,
    pub rerank_score: Option<f64>,
    /// Cosine similarity to the query, set by stage 3.
    pub query_similarity: Option<f64>,
}

/// Final retrieval result, at most `top_k` entries in pipeline order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retrieval {
    pub items: Vec<Candidate>,
}

impl Retrieval {
    pub fn to_context(&self) -> RetrievedContext {
        RetrievedContext {
            experiences: self
                .items
                .iter()
                .map(|c| RetrievedExperience {
                    state_text: c.tuple.state_text.clone(),
                    action_text: c.tuple.action_text.clone(),
                    reward: c.tuple.reward,
                })
                .collect(),
        }
    }
}

/// Combined stage-1 score: cosine similarity to the query plus the
/// alpha-weighted historical reward.
pub fn combined_score(
    query_emb: &[f32],
    exp: &ExperienceTuple,
    alpha: f64,
) -> Result<f64, RetrievalError> {
    if query_emb.len() != exp.embedding.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: exp.embedding.len(),
            got: query_emb.len(),
        });
    }
    Ok(cosine(query_emb, &exp.embedding) + alpha * exp.reward)
}

/// Stage 2: stable descending reorder by cross-score against the query.
pub fn stage2_rerank(
    reranker: &dyn Reranker,
    query_text: &str,
    mut candidates: Vec<Candidate>,
) -> Result<Vec<Candidate>, RetrievalError> {
    for c in &mut candidates {
        c.rerank_score = Some(reranker.rerank_score(query_text, &c.tuple.state_text)?);
    }
    // sort_by is stable: ties keep their stage-1 order.
    candidates.sort_by(|a, b| {
        b.rerank_score
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.rerank_score.unwrap_or(f64::NEG_INFINITY))
    });
    Ok(candidates)
}

/// Dynamic reward threshold over a candidate set: `mean + beta_std * std`,
/// with the population standard deviation (a singleton has zero spread).
pub fn dynamic_threshold(rewards: &[f64], beta_std: f64) -> Result<f64, RetrievalError> {
    if rewards.is_empty() {
        return Err(RetrievalError::EmptyCandidates);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(mean + beta_std * variance.sqrt())
}

/// Stage 3: keep candidates strictly below the novelty bound and strictly
/// above the dynamic reward threshold computed over the incoming candidate
/// set. Order is preserved.
pub fn stage3_filter(
    query_emb: &[f32],
    candidates: Vec<Candidate>,
    cfg: &RetrievalConfig,
) -> Vec<Candidate> {
    if candidates.is_empty() {
        return candidates;
    }
    let rewards: Vec<f64> = candidates.iter().map(|c| c.tuple.reward).collect();
    let tau_dynamic =
        dynamic_threshold(&rewards, cfg.beta_std).expect("candidate set checked non-empty");
    candidates
        .into_iter()
        .filter_map(|mut c| {
            let similarity = cosine(query_emb, &c.tuple.embedding);
            c.query_similarity = Some(similarity);
            (similarity < cfg.tau_novelty && c.tuple.reward > tau_dynamic).then_some(c)
        })
        .collect()
}

struct Inner {
    tuples: Vec<ExperienceTuple>,
    storage: Option<store::Storage>,
}

/// The experience repository: many concurrent readers, one writer, with
/// optional append-only persistence.
pub struct ExperienceRepository {
    embedder: Arc<dyn Embedder>,
    inner: RwLock<Inner>,
}

impl ExperienceRepository {
    /// Open (or create) a persistent store under `dir`.
    pub fn open(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, StoreError> {
        let (storage, tuples) = store::Storage::open(dir, embedder.dim())?;
        Ok(Self {
            embedder,
            inner: RwLock::new(Inner {
                tuples,
                storage: Some(storage),
            }),
        })
    }

    /// An in-memory store with no persistence (tests, dry runs).
    pub fn ephemeral(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            inner: RwLock::new(Inner {
                tuples: Vec::new(),
                storage: None,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("lock poisoned").tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consistent copy of the stored tuples in id order.
    pub fn snapshot(&self) -> Vec<ExperienceTuple> {
        self.inner.read().expect("lock poisoned").tuples.clone()
    }

    /// Store exactly the subset of the batch whose reward meets or exceeds
    /// `tau_reward`, embedding each state text. The in-memory index and the
    /// persisted log are updated in one exclusive commit section; readers
    /// never observe a torn batch. Returns the number stored.
    pub fn store_batch(
        &self,
        batch: &[NewExperience],
        cfg: &RetrievalConfig,
    ) -> Result<usize, StoreError> {
        for e in batch {
            if !e.reward.is_finite() || !(-1.0..=1.0).contains(&e.reward) {
                return Err(StoreError::InvalidReward(e.reward));
            }
        }
        let selected: Vec<&NewExperience> = batch
            .iter()
            .filter(|e| e.reward >= cfg.tau_reward)
            .collect();
        if selected.is_empty() {
            return Ok(0);
        }
        let mut embeddings = Vec::with_capacity(selected.len());
        for e in &selected {
            let v = self.embedder.embed(&e.state_text)?;
            if v.len() != self.embedder.dim() {
                return Err(StoreError::Embed(EmbedError::Dimension {
                    expected: self.embedder.dim(),
                    got: v.len(),
                }));
            }
            embeddings.push(v);
        }

        let mut inner = self.inner.write().expect("lock poisoned");
        let first_id = inner.tuples.last().map_or(0, |t| t.id + 1);
        let mut new_tuples = Vec::with_capacity(selected.len());
        for (offset, (e, embedding)) in selected.iter().zip(embeddings).enumerate() {
            new_tuples.push(ExperienceTuple {
                id: first_id + offset as u64,
                state_text: e.state_text.clone(),
                action_text: e.action_text.clone(),
                reward: e.reward,
                embedding,
            });
        }
        if let Some(storage) = inner.storage.as_mut() {
            storage.append_batch(&new_tuples)?;
        }
        let stored = new_tuples.len();
        inner.tuples.extend(new_tuples);
        Ok(stored)
    }

    /// Stage 1: the `top_n` stored tuples by combined score, descending,
    /// ties broken by ascending id.
    pub fn stage1_candidates(
        &self,
        query_text: &str,
        cfg: &RetrievalConfig,
    ) -> Result<Vec<Candidate>, RetrievalError> {
        let query_emb = self.embedder.embed(query_text)?;
        let inner = self.inner.read().expect("lock poisoned");
        Self::stage1_from(&inner.tuples, &query_emb, cfg)
    }

    fn stage1_from(
        tuples: &[ExperienceTuple],
        query_emb: &[f32],
        cfg: &RetrievalConfig,
    ) -> Result<Vec<Candidate>, RetrievalError> {
        let mut scored = Vec::with_capacity(tuples.len());
        for t in tuples {
            let score = combined_score(query_emb, t, cfg.alpha)?;
            scored.push(Candidate {
                tuple: t.clone(),
                combined_score: score,
                rerank_score: None,
                query_similarity: None,
            });
        }
        scored.sort_by(|a, b| {
            b.combined_score
                .total_cmp(&a.combined_score)
                .then(a.tuple.id.cmp(&b.tuple.id))
        });
        scored.truncate(cfg.top_n);
        Ok(scored)
    }

    /// Full pipeline: stage 1 candidates, stage 2 rerank, stage 3 filters,
    /// truncated to `top_k`. An empty result is valid; an empty repository
    /// degrades gracefully to an empty retrieval.
    pub fn retrieve(
        &self,
        query_text: &str,
        cfg: &RetrievalConfig,
        reranker: &dyn Reranker,
    ) -> Result<Retrieval, RetrievalError> {
        let query_emb = self.embedder.embed(query_text)?;
        let candidates = {
            let inner = self.inner.read().expect("lock poisoned");
            Self::stage1_from(&inner.tuples, &query_emb, cfg)?
        };
        if candidates.is_empty() {
            return Ok(Retrieval::default());
        }
        let reranked = stage2_rerank(reranker, query_text, candidates)?;
        let mut kept = stage3_filter(&query_emb, reranked, cfg);
        kept.truncate(cfg.top_k);
        Ok(Retrieval { items: kept })
    }

    /// Rewrite the persisted files to the reconciled in-memory contents.
    /// Returns the number of tuples written. No-op count for ephemeral
    /// repositories.
    pub fn compact(&self) -> Result<usize, StoreError> {
        let mut inner = self.inner.write().expect("lock poisoned");
        let n = inner.tuples.len();
        // Split borrow: storage rewrite needs the tuple slice.
        let Inner { tuples, storage } = &mut *inner;
        if let Some(storage) = storage.as_mut() {
            storage.rewrite(tuples)?;
        }
        Ok(n)
    }

    /// Count persisted on disk (header count), if persistent.
    pub fn persisted_count(&self) -> Option<u32> {
        self.inner
            .read()
            .expect("lock poisoned")
            .storage
            .as_ref()
            .map(|s| s.count())
    }
}
