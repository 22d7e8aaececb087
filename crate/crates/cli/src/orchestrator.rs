//! Batch rollout driver.
//!
//! One episode is a closed loop per doctor turn: retrieve experiences for
//! the current dialogue state, build the augmented policy prompt, complete
//! it, parse the tagged action, let the judge score the turn, and append
//! the patient's reply until the policy recommends or the turn cap hits.
//! Terminal outcomes are judged only for recommended episodes; an episode
//! cut off at the turn cap scores 0.0 without a judge call, and any
//! backend or format failure seals the episode as an error without
//! aborting the batch.
//!
//! Determinism: mock backends are pure functions of (seed, messages), and
//! experience commits are deferred to the end of the batch and applied in
//! scenario order, so reruns and different worker counts produce
//! byte-identical episode, experience, and group files. Deferring storage
//! also means every episode in a batch retrieves against the repository
//! state from the start of the batch.

use crate::config::{sanitize_id, AgentRole, GroupRewardMode, RunConfig};
use anyhow::{Context, Result};
use consult_core::client::{
    parse::parse_doctor_response,
    prompt::{build_doctor_prompt, build_patient_prompt},
    ChatBackend, RetrievedContext,
};
use consult_core::dialogue::{
    ActionKind, Episode, PatientScenario, Role, TerminalStatus, Termination, Turn,
};
use consult_core::experience::{
    CosineReranker, ExperienceRepository, HashEmbedder, NewExperience, Reranker,
};
use consult_core::grpo::{build_group, export_training_records, GrpoGroup};
use consult_core::reward::{judge_outcome, judge_turn, outcome_reward, process_reward};
use consult_core::util::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// Everything one rollout produced.
#[derive(Debug, Clone)]
pub struct RolloutOutcome {
    pub episode: Episode,
    /// (state, action, reward) tuples for the storage gate.
    pub experiences: Vec<NewExperience>,
    /// Full judge score vector behind each computed turn reward, in turn
    /// order, for the audit log.
    pub audit: Vec<TurnAudit>,
    /// The policy-side transcript used as the group response text.
    pub response_text: String,
    /// The patient's opening complaint (the group prompt).
    pub opening: String,
    /// Scalar rollout reward under the configured group reward mode.
    pub group_reward: f64,
    /// Driver-level note for error-terminated episodes.
    pub error: Option<String>,
}

/// One scored turn: the judge's full dimension vector and the reward it
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnAudit {
    pub turn_index: usize,
    pub scores: consult_core::reward::DimensionScores,
    pub reward: f64,
}

/// Audit-log line: one per computed turn reward across the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAuditRecord {
    pub scenario_id: String,
    pub rollout: usize,
    pub turn_index: usize,
    pub scores: consult_core::reward::DimensionScores,
    pub reward: f64,
}

pub struct EpisodeBackends {
    pub doctor: Arc<dyn ChatBackend>,
    pub patient: Arc<dyn ChatBackend>,
    pub judge: Arc<dyn ChatBackend>,
}

/// Drive one episode to termination. Never panics on backend trouble: any
/// failure seals the episode with an error termination.
pub fn run_episode(
    scenario: &PatientScenario,
    config: &RunConfig,
    backends: &EpisodeBackends,
    repo: Option<&ExperienceRepository>,
    reranker: &dyn Reranker,
) -> RolloutOutcome {
    let mut episode = Episode::new(&scenario.id);
    let mut experiences = Vec::new();
    let mut audit: Vec<TurnAudit> = Vec::new();
    let mut error: Option<String> = None;

    let seal = |episode: Episode,
                experiences: Vec<NewExperience>,
                audit: Vec<TurnAudit>,
                termination: Termination,
                outcome: Option<f64>,
                error: Option<String>,
                opening: String,
                mode: GroupRewardMode| {
        let episode = episode.finished(termination, outcome);
        let mean_turn = if episode.turn_rewards.is_empty() {
            0.0
        } else {
            episode.turn_rewards.iter().sum::<f64>() / episode.turn_rewards.len() as f64
        };
        let group_reward = match mode {
            GroupRewardMode::OutcomePlusMeanProcess => outcome.unwrap_or(0.0) + mean_turn,
            GroupRewardMode::OutcomeOnly => outcome.unwrap_or(0.0),
        };
        let response_text = episode
            .turns
            .iter()
            .filter(|t| t.role == Role::Doctor)
            .map(|t| t.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        RolloutOutcome {
            episode,
            experiences,
            audit,
            response_text,
            opening,
            group_reward,
            error,
        }
    };
    let mode = config.group_reward_mode;

    // Opening complaint: the patient speaks first, from persona alone.
    let opening_messages = build_patient_prompt(scenario, &episode.observation());
    let opening = match backends.patient.chat_complete(&opening_messages) {
        Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
        Ok(_) => {
            return seal(
                episode,
                experiences,
                audit,
                Termination::Error,
                None,
                Some("patient backend returned an empty opening".into()),
                String::new(),
                mode,
            )
        }
        Err(e) => {
            return seal(
                episode,
                experiences,
                audit,
                Termination::Error,
                None,
                Some(format!("patient backend failed on the opening: {e}")),
                String::new(),
                mode,
            )
        }
    };
    episode = episode
        .append_turn(Turn::new(0, Role::Patient, opening.clone()))
        .expect("turn 0 is a patient turn");

    let termination;
    let mut final_recommendation: Option<String> = None;

    loop {
        match episode.is_terminal(&config.episode) {
            TerminalStatus::Continue => {}
            TerminalStatus::Recommended => {
                termination = Termination::Recommended;
                break;
            }
            TerminalStatus::MaxTurns => {
                termination = Termination::MaxTurns;
                break;
            }
        }

        let obs = episode.observation();
        let state_text = obs.transcript();

        let ctx = match repo {
            Some(repo) => match repo.retrieve(&state_text, &config.retrieval, reranker) {
                Ok(retrieval) => retrieval.to_context(),
                Err(e) => {
                    error = Some(format!("retrieval failed: {e}"));
                    termination = Termination::Error;
                    break;
                }
            },
            None => RetrievedContext::default(),
        };

        let messages = match build_doctor_prompt(&obs, &ctx) {
            Ok(m) => m,
            Err(e) => {
                error = Some(format!("doctor prompt: {e}"));
                termination = Termination::Error;
                break;
            }
        };
        let raw = match backends.doctor.chat_complete(&messages) {
            Ok(r) => r,
            Err(e) => {
                error = Some(format!("doctor backend failed: {e}"));
                termination = Termination::Error;
                break;
            }
        };

        let turn_index = episode.turns.len();
        match parse_doctor_response(&raw, config.strict_format) {
            Err(violation) => {
                // The malformed reply is kept verbatim as the final doctor
                // turn and scored with the minimum reward; format adherence
                // is a hard constraint, so the episode ends here.
                episode = episode
                    .append_turn(Turn::new(turn_index, Role::Doctor, raw.trim()))
                    .expect("doctor turn follows patient turn");
                episode = episode.push_turn_reward(config.reward.r_min);
                error = Some(format!("format violation: {violation}"));
                termination = Termination::Error;
                break;
            }
            Ok(action) => {
                let visible = action.visible_text();
                episode = episode
                    .append_turn(Turn::new(turn_index, Role::Doctor, visible.clone()))
                    .expect("doctor turn follows patient turn");
                episode = episode.push_action(action.clone());

                // The judge sees the history *before* this turn plus the
                // full tagged response.
                let scores =
                    match judge_turn(backends.judge.as_ref(), &obs, &scenario.ground_truth, &raw) {
                        Ok(s) => s,
                        Err(e) => {
                            episode = episode.push_turn_reward(config.reward.r_min);
                            error = Some(format!("turn judge failed: {e}"));
                            termination = Termination::Error;
                            break;
                        }
                    };
                let reward = match process_reward(&scores, &config.reward) {
                    Ok(r) => r,
                    Err(e) => {
                        episode = episode.push_turn_reward(config.reward.r_min);
                        error = Some(format!("reward computation failed: {e}"));
                        termination = Termination::Error;
                        break;
                    }
                };
                episode = episode.push_turn_reward(reward);
                audit.push(TurnAudit {
                    turn_index,
                    scores,
                    reward,
                });
                experiences.push(NewExperience {
                    state_text: state_text.clone(),
                    action_text: visible,
                    reward,
                });

                if action.kind == ActionKind::Recommendation {
                    final_recommendation = Some(action.content.clone());
                    termination = Termination::Recommended;
                    break;
                }
                if episode.is_terminal(&config.episode) == TerminalStatus::MaxTurns {
                    termination = Termination::MaxTurns;
                    break;
                }

                let patient_messages = build_patient_prompt(scenario, &episode.observation());
                let reply = match backends.patient.chat_complete(&patient_messages) {
                    Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
                    Ok(_) => {
                        error = Some("patient backend returned an empty reply".into());
                        termination = Termination::Error;
                        break;
                    }
                    Err(e) => {
                        error = Some(format!("patient backend failed: {e}"));
                        termination = Termination::Error;
                        break;
                    }
                };
                let patient_index = episode.turns.len();
                episode = episode
                    .append_turn(Turn::new(patient_index, Role::Patient, reply))
                    .expect("patient turn follows doctor turn");
            }
        }
    }

    let (termination, outcome) = match termination {
        Termination::Recommended => {
            let recommendation = final_recommendation
                .or_else(|| episode.actions.last().map(|a| a.content.clone()))
                .unwrap_or_default();
            match judge_outcome(
                backends.judge.as_ref(),
                &recommendation,
                &scenario.ground_truth,
            ) {
                Ok(c) => (Termination::Recommended, Some(outcome_reward(c))),
                Err(e) => {
                    error = Some(format!("outcome judge failed: {e}"));
                    (Termination::Error, None)
                }
            }
        }
        // No recommendation was made, so no partial credit is possible.
        Termination::MaxTurns => (Termination::MaxTurns, Some(0.0)),
        Termination::Error => (Termination::Error, None),
    };

    seal(
        episode,
        experiences,
        audit,
        termination,
        outcome,
        error,
        opening,
        mode,
    )
}

/// Outcome-reward distribution over a batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub correct: usize,
    pub partial: usize,
    pub incorrect: usize,
    /// Error-terminated episodes carry no outcome reward.
    pub none: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub episodes_run: usize,
    pub mean_turn_reward: f64,
    pub outcome_distribution: OutcomeDistribution,
    pub stored_experiences: usize,
    pub groups_exported: usize,
    pub error_episodes: usize,
    /// Termination counts keyed by reason, for quick run triage.
    pub terminations: BTreeMap<String, usize>,
}

impl std::fmt::Display for BatchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "episodes run:        {}", self.episodes_run)?;
        writeln!(f, "mean turn reward:    {:.6}", self.mean_turn_reward)?;
        writeln!(
            f,
            "outcomes:            correct {} / partial {} / incorrect {} / none {}",
            self.outcome_distribution.correct,
            self.outcome_distribution.partial,
            self.outcome_distribution.incorrect,
            self.outcome_distribution.none
        )?;
        writeln!(f, "stored experiences:  {}", self.stored_experiences)?;
        writeln!(f, "groups exported:     {}", self.groups_exported)?;
        write!(f, "error episodes:      {}", self.error_episodes)
    }
}

fn write_atomically(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Run every (scenario, rollout) pair to completion, persist episodes as
/// they finish, then commit experience storage and group export in
/// scenario order.
pub fn run_batch(config: &RunConfig) -> Result<BatchSummary> {
    let scenarios = crate::config::load_scenarios(&config.scenario_path)?;
    let out = &config.output_dir;
    let episodes_dir = out.join("episodes");
    let experiences_dir = out.join("experiences");
    let groups_dir = out.join("groups");
    let reports_dir = out.join("reports");
    for dir in [&episodes_dir, &experiences_dir, &groups_dir, &reports_dir] {
        std::fs::create_dir_all(dir)?;
    }

    let embedder = Arc::new(HashEmbedder::new(config.embed_dim));
    let repo = ExperienceRepository::open(&experiences_dir, embedder.clone())
        .context("opening experience store")?;
    let reranker = CosineReranker::new(embedder);

    // Task grid in deterministic order.
    let tasks: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..config.rollouts_per_scenario).map(move |r| (s, r)))
        .collect();
    let results: Vec<Mutex<Option<RolloutOutcome>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();
    let next_task = AtomicUsize::new(0);

    std::thread::scope(|scope| -> Result<()> {
        let workers = config.parallelism.min(tasks.len().max(1));
        let mut handles = Vec::new();
        for _ in 0..workers {
            handles.push(scope.spawn(|| -> Result<()> {
                loop {
                    let t = next_task.fetch_add(1, Ordering::SeqCst);
                    if t >= tasks.len() {
                        return Ok(());
                    }
                    let (scenario_idx, rollout_idx) = tasks[t];
                    let scenario = &scenarios[scenario_idx];
                    // The patient stream is shared across a scenario's
                    // rollouts so every rollout answers the same opening
                    // complaint; the policy stream varies per rollout.
                    let backends = EpisodeBackends {
                        doctor: config.make_backend(
                            AgentRole::Doctor,
                            derive_seed(
                                config.seed,
                                "doctor",
                                &[scenario_idx as u64, rollout_idx as u64],
                            ),
                        ),
                        patient: config.make_backend(
                            AgentRole::Patient,
                            derive_seed(config.seed, "patient", &[scenario_idx as u64]),
                        ),
                        judge: config.make_backend(
                            AgentRole::Judge,
                            derive_seed(
                                config.seed,
                                "judge",
                                &[scenario_idx as u64, rollout_idx as u64],
                            ),
                        ),
                    };
                    let outcome = run_episode(scenario, config, &backends, Some(&repo), &reranker);

                    let file = episodes_dir.join(format!(
                        "{}_r{}.jsonl",
                        sanitize_id(&scenario.id),
                        rollout_idx
                    ));
                    let line = outcome
                        .episode
                        .to_jsonl_line()
                        .context("serializing episode")?;
                    write_atomically(&file, &format!("{line}\n"))?;

                    *results[t].lock().expect("result slot") = Some(outcome);
                }
            }));
        }
        for handle in handles {
            handle.join().expect("rollout worker panicked")?;
        }
        Ok(())
    })?;

    let outcomes: Vec<RolloutOutcome> = results
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot").expect("task completed"))
        .collect();

    // Storage commits in scenario order, after the whole batch.
    let mut stored = 0;
    for outcome in &outcomes {
        stored += repo.store_batch(&outcome.experiences, &config.retrieval)?;
    }

    // Audit log: every computed turn reward with its full score vector.
    let mut audit_lines = String::new();
    for (t, outcome) in outcomes.iter().enumerate() {
        let (scenario_idx, rollout_idx) = tasks[t];
        for turn in &outcome.audit {
            let record = RewardAuditRecord {
                scenario_id: scenarios[scenario_idx].id.clone(),
                rollout: rollout_idx,
                turn_index: turn.turn_index,
                scores: turn.scores,
                reward: turn.reward,
            };
            audit_lines.push_str(&serde_json::to_string(&record)?);
            audit_lines.push('\n');
        }
    }
    write_atomically(&reports_dir.join("reward_audit.jsonl"), &audit_lines)?;

    // One group per scenario with at least two rollouts.
    let mut groups: Vec<GrpoGroup> = Vec::new();
    if config.rollouts_per_scenario >= 2 {
        for (scenario_idx, _) in scenarios.iter().enumerate() {
            let rollouts: Vec<(String, f64)> = outcomes
                .iter()
                .enumerate()
                .filter(|(t, _)| tasks[*t].0 == scenario_idx)
                .map(|(_, o)| (o.response_text.clone(), o.group_reward))
                .collect();
            let prompt = outcomes
                .iter()
                .enumerate()
                .find(|(t, _)| tasks[*t].0 == scenario_idx)
                .map(|(_, o)| o.opening.clone())
                .unwrap_or_default();
            groups.push(build_group(prompt, &rollouts)?);
        }
    }
    let groups_path = groups_dir.join("groups.jsonl");
    let groups_exported = export_training_records(&groups, &groups_path)?;

    // Exact aggregates over the persisted episodes.
    let mut turn_reward_sum = 0.0;
    let mut turn_reward_count = 0usize;
    let mut distribution = OutcomeDistribution::default();
    let mut terminations: BTreeMap<String, usize> = BTreeMap::new();
    let mut error_episodes = 0;
    for outcome in &outcomes {
        let ep = &outcome.episode;
        turn_reward_sum += ep.turn_rewards.iter().sum::<f64>();
        turn_reward_count += ep.turn_rewards.len();
        match ep.outcome_reward {
            None => distribution.none += 1,
            Some(r) => {
                if r == 1.0 {
                    distribution.correct += 1;
                } else if r == 0.5 {
                    distribution.partial += 1;
                } else {
                    distribution.incorrect += 1;
                }
            }
        }
        let reason = match ep.termination {
            Some(Termination::Recommended) => "recommended",
            Some(Termination::MaxTurns) => "max_turns",
            Some(Termination::Error) => "error",
            None => "unterminated",
        };
        *terminations.entry(reason.to_string()).or_default() += 1;
        if ep.termination == Some(Termination::Error) {
            error_episodes += 1;
            if let Some(note) = &outcome.error {
                eprintln!("episode {}: {note}", ep.scenario_id);
            }
        }
    }

    let summary = BatchSummary {
        episodes_run: outcomes.len(),
        mean_turn_reward: if turn_reward_count == 0 {
            0.0
        } else {
            turn_reward_sum / turn_reward_count as f64
        },
        outcome_distribution: distribution,
        stored_experiences: stored,
        groups_exported,
        error_episodes,
        terminations,
    };
    write_atomically(
        &reports_dir.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    Ok(summary)
}
