//! Core library of the closed-loop consultation harness.
//!
//! The pieces fit together as one rollout loop: the [`dialogue`] module
//! holds the consultation state machine; [`client`] builds role prompts,
//! talks to chat backends, and parses the tagged replies; [`reward`]
//! computes the veto-gated per-turn reward and the terminal outcome
//! reward; [`experience`] stores high-reward steps and serves the
//! three-stage retrieval pipeline that augments the policy prompt;
//! [`grpo`] turns scored rollouts into group-relative training records;
//! [`eval`] screens generated dialogues and aggregates pairwise human
//! judgments. The batch driver wiring these together lives in the CLI
//! crate.

pub mod client;
pub mod dialogue;
pub mod eval;
pub mod experience;
pub mod grpo;
pub mod reward;
pub mod util;

pub use client::{
    BackendConfig, ChatBackend, ChatMessage, ChatRole, ClientError, HttpBackend, MockBackend,
    MockRole, RetrievedContext, RetrievedExperience, ScriptEntry,
};
pub use dialogue::{
    ActionKind, DialogueError, DoctorAction, Episode, EpisodeConfig, Observation, PatientScenario,
    Role, TerminalStatus, Termination, Turn,
};
pub use eval::{
    adherence_filter, aggregate_win_rates, default_adherence_rules, load_judgments, rank_models,
    render_leaderboard, AdherenceReport, AdherenceRule, Metric, PairwiseJudgment, Verdict,
    WinRateTable,
};
pub use experience::{
    combined_score, dynamic_threshold, stage2_rerank, stage3_filter, CosineReranker, Embedder,
    ExperienceRepository, ExperienceTuple, HashEmbedder, NewExperience, Reranker, Retrieval,
    RetrievalConfig,
};
pub use grpo::{build_group, export_training_records, grpo_loss, GrpoGroup, TrainingRecord};
pub use reward::{
    judge_outcome, judge_turn, outcome_reward, process_reward, Correctness, DimensionScores,
    DimensionWeights, RewardConfig,
};
