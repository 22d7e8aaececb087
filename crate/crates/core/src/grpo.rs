//! Group-relative listwise loss over rollout groups.
//!
//! A group is one prompt with a chosen response and N rejected responses,
//! each carrying a scalar reward. The loss is the negative log-softmax of
//! the chosen reward over the whole group, computed with max-subtraction
//! so that uniformly shifting all rewards leaves the result unchanged to
//! well below 1e-12. Weight updates live in an external trainer; this
//! module produces the groups, losses, and the JSONL hand-off records.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// One prompt with a chosen response and at least one rejected response.
///
/// After construction through [`build_group`], the chosen reward is the
/// group maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub prompt_text: String,
    pub chosen: (String, f64),
    pub rejected: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has no rejected responses")]
    EmptyGroup,
    #[error("need at least two rollouts to form a group, got {0}")]
    TooFewRollouts(usize),
    #[error("rollout reward {0} is not finite")]
    NonFiniteReward(f64),
}

/// Negative log-softmax of the chosen reward over the group.
pub fn grpo_loss(group: &GrpoGroup) -> Result<f64, GrpoError> {
    if group.rejected.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let chosen = group.chosen.1;
    if !chosen.is_finite() {
        return Err(GrpoError::NonFiniteReward(chosen));
    }
    let mut max = chosen;
    for (_, r) in &group.rejected {
        if !r.is_finite() {
            return Err(GrpoError::NonFiniteReward(*r));
        }
        if *r > max {
            max = *r;
        }
    }
    let mut denom = (chosen - max).exp();
    for (_, r) in &group.rejected {
        denom += (r - max).exp();
    }
    Ok(denom.ln() - (chosen - max))
}

/// Form a group from raw (response, reward) rollouts: the maximal-reward
/// rollout becomes the chosen response (ties break toward the lowest
/// index); the rest become rejections in their original order.
pub fn build_group(
    prompt: impl Into<String>,
    rollouts: &[(String, f64)],
) -> Result<GrpoGroup, GrpoError> {
    if rollouts.len() < 2 {
        return Err(GrpoError::TooFewRollouts(rollouts.len()));
    }
    let mut best = 0usize;
    for (i, (_, reward)) in rollouts.iter().enumerate() {
        if !reward.is_finite() {
            return Err(GrpoError::NonFiniteReward(*reward));
        }
        if *reward > rollouts[best].1 {
            best = i;
        }
    }
    let rejected = rollouts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, r)| r.clone())
        .collect();
    Ok(GrpoGroup {
        prompt_text: prompt.into(),
        chosen: rollouts[best].clone(),
        rejected,
    })
}

/// Hand-off record for an external trainer; one JSONL line per group.
/// `rewards[0]` belongs to `chosen`, the rest align with `rejected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: Vec<String>,
    pub rewards: Vec<f64>,
    pub loss: f64,
}

impl TrainingRecord {
    pub fn from_group(group: &GrpoGroup) -> Result<Self, GrpoError> {
        let loss = grpo_loss(group)?;
        let mut rewards = Vec::with_capacity(group.rejected.len() + 1);
        rewards.push(group.chosen.1);
        rewards.extend(group.rejected.iter().map(|(_, r)| *r));
        Ok(Self {
            prompt: group.prompt_text.clone(),
            chosen: group.chosen.0.clone(),
            rejected: group.rejected.iter().map(|(t, _)| t.clone()).collect(),
            rewards,
            loss,
        })
    }

    pub fn to_group(&self) -> GrpoGroup {
        GrpoGroup {
            prompt_text: self.prompt.clone(),
            chosen: (self.chosen.clone(), self.rewards[0]),
            rejected: self
                .rejected
                .iter()
                .cloned()
                .zip(self.rewards[1..].iter().copied())
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

/// Write one JSONL record per group; returns the record count.
pub fn export_training_records(groups: &[GrpoGroup], path: &Path) -> Result<usize, ExportError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for group in groups {
        let record = TrainingRecord::from_group(group)?;
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(groups.len())
}

/// Read back an exported record file.
pub fn load_training_records(path: &Path) -> Result<Vec<TrainingRecord>, ExportError> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
