//! Dialogue state machine for doctor/patient consultations.
//!
//! A consultation is modeled as a partially observable decision process:
//! the doctor never sees the patient's underlying condition, only the
//! dialogue history (the [`Observation`]). Episodes are persistent values:
//! every extension returns a new episode and leaves the old one untouched,
//! so distinct rollouts can be driven concurrently without shared mutable
//! state and a terminated episode is a stable training record.
//!
//! Turn layout: the patient speaks first (turn 0 carries the presenting
//! complaint), roles strictly alternate, and turn indices are contiguous
//! from 0. `max_turns` caps the number of *doctor* turns in an episode.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Speaker of a dialogue turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Doctor,
    Patient,
}

impl Role {
    /// Role expected at a given turn index (patient opens).
    pub fn expected_at(index: usize) -> Role {
        if index.is_multiple_of(2) {
            Role::Patient
        } else {
            Role::Doctor
        }
    }
}

/// One utterance in a consultation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(index: usize, role: Role, content: impl Into<String>) -> Self {
        Self {
            index,
            role,
            content: content.into(),
        }
    }
}

/// The dialogue history visible to the policy at some point in time.
///
/// Always a prefix of the episode's turn list, never reordered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub turns: Vec<Turn>,
}

impl Observation {
    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    /// Canonical plain-text rendering, one `Role: content` line per turn.
    ///
    /// This is the state text used for experience storage and retrieval
    /// queries, and the `[Conversation History]` block shown to the judge.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for turn in &self.turns {
            if !out.is_empty() {
                out.push('\n');
            }
            match turn.role {
                Role::Patient => out.push_str("Patient: "),
                Role::Doctor => out.push_str("Doctor: "),
            }
            out.push_str(&turn.content);
        }
        out
    }

    /// True when `self` is a strict prefix of `other`.
    pub fn is_strict_prefix_of(&self, other: &Observation) -> bool {
        self.turns.len() < other.turns.len() && other.turns[..self.turns.len()] == self.turns[..]
    }
}

/// What kind of move the doctor made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Inquiry,
    Recommendation,
}

/// Parsed policy output: a reasoning trace plus either a follow-up question
/// or a terminal recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoctorAction {
    pub reasoning: String,
    pub kind: ActionKind,
    pub content: String,
}

impl DoctorAction {
    /// The utterance the patient sees, prefix included.
    pub fn visible_text(&self) -> String {
        match self.kind {
            ActionKind::Inquiry => format!("Question: {}", self.content),
            ActionKind::Recommendation => format!("Recommendation: {}", self.content),
        }
    }
}

/// One simulated patient case: a persona with a hidden condition and the
/// expert reply used as grading ground truth. The ground truth is shown to
/// the judge only, never to either conversational agent's counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientScenario {
    pub id: String,
    pub persona: String,
    pub ground_truth: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Recommended,
    MaxTurns,
    Error,
}

/// Episode-level loop limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Maximum number of doctor turns before the episode is cut off.
    pub max_turns: usize,
    /// Default sampling temperature for the policy backend.
    pub decode_temperature: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_turns: 10,
            decode_temperature: 0.0,
        }
    }
}

/// Loop status derived from an episode's contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    Continue,
    Recommended,
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("turn index {got} does not extend episode of length {expected}")]
    IndexGap { expected: usize, got: usize },
    #[error("turn {index} must be spoken by {expected:?}, got {got:?}")]
    RoleOrderViolation {
        index: usize,
        expected: Role,
        got: Role,
    },
    #[error("episode is terminated and cannot be extended")]
    Terminated,
}

/// A full consultation record: turns, parsed doctor actions, per-turn
/// process rewards, the terminal outcome reward, and the termination reason.
///
/// `actions` aligns one-to-one with doctor turns, except for episodes
/// terminated with [`Termination::Error`], where the final doctor turn holds
/// the raw unparseable reply and has no action. `turn_rewards` aligns
/// one-to-one with doctor turns in every case (a malformed reply is scored
/// with the minimum reward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scenario_id: String,
    pub turns: Vec<Turn>,
    pub actions: Vec<DoctorAction>,
    pub turn_rewards: Vec<f64>,
    pub outcome_reward: Option<f64>,
    pub termination: Option<Termination>,
}

impl Episode {
    pub fn new(scenario_id: impl Into<String>) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            turns: Vec::new(),
            actions: Vec::new(),
            turn_rewards: Vec::new(),
            outcome_reward: None,
            termination: None,
        }
    }

    /// Extend the episode by one turn, returning the extended copy.
    ///
    /// The turn must carry the next contiguous index and the alternating
    /// role (patient on even indices).
    pub fn append_turn(&self, turn: Turn) -> Result<Episode, DialogueError> {
        if self.termination.is_some() {
            return Err(DialogueError::Terminated);
        }
        let expected_index = self.turns.len();
        if turn.index != expected_index {
            return Err(DialogueError::IndexGap {
                expected: expected_index,
                got: turn.index,
            });
        }
        let expected_role = Role::expected_at(expected_index);
        if turn.role != expected_role {
            return Err(DialogueError::RoleOrderViolation {
                index: turn.index,
                expected: expected_role,
                got: turn.role,
            });
        }
        let mut next = self.clone();
        next.turns.push(turn);
        Ok(next)
    }

    /// Record the parsed action behind the most recent doctor turn.
    pub fn push_action(&self, action: DoctorAction) -> Episode {
        let mut next = self.clone();
        next.actions.push(action);
        next
    }

    /// Record the process reward for the most recent doctor turn.
    pub fn push_turn_reward(&self, reward: f64) -> Episode {
        let mut next = self.clone();
        next.turn_rewards.push(reward);
        next
    }

    /// Seal the episode. Sealed episodes reject further appends.
    pub fn finished(&self, termination: Termination, outcome_reward: Option<f64>) -> Episode {
        let mut next = self.clone();
        next.termination = Some(termination);
        next.outcome_reward = outcome_reward;
        next
    }

    /// Snapshot of the dialogue history at this moment.
    pub fn observation(&self) -> Observation {
        Observation {
            turns: self.turns.clone(),
        }
    }

    pub fn doctor_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Doctor).count()
    }

    /// Loop status: `Recommended` iff the last doctor action was a
    /// recommendation, `MaxTurns` iff the doctor-turn cap is reached,
    /// otherwise `Continue`. Pure and idempotent.
    pub fn is_terminal(&self, config: &EpisodeConfig) -> TerminalStatus {
        if matches!(
            self.actions.last().map(|a| a.kind),
            Some(ActionKind::Recommendation)
        ) {
            return TerminalStatus::Recommended;
        }
        if self.doctor_turn_count() >= config.max_turns {
            return TerminalStatus::MaxTurns;
        }
        TerminalStatus::Continue
    }

    /// Check structural invariants: contiguous indices, alternating roles,
    /// reward/turn alignment, and recommendation placement.
    pub fn validate(&self) -> Result<(), String> {
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i {
                return Err(format!("turn {} carries index {}", i, turn.index));
            }
            if turn.role != Role::expected_at(i) {
                return Err(format!("turn {} has out-of-order role {:?}", i, turn.role));
            }
        }
        let doctor_turns = self.doctor_turn_count();
        if self.turn_rewards.len() != doctor_turns {
            return Err(format!(
                "{} turn rewards for {} doctor turns",
                self.turn_rewards.len(),
                doctor_turns
            ));
        }
        // Error-terminated episodes may end on an unparseable doctor turn
        // that has no action; every other turn is action-aligned.
        let aligned = self.actions.len() == doctor_turns
            || (self.termination == Some(Termination::Error)
                && self.actions.len() + 1 == doctor_turns);
        if !aligned {
            return Err(format!(
                "{} actions for {} doctor turns (termination {:?})",
                self.actions.len(),
                doctor_turns,
                self.termination
            ));
        }
        if self.termination == Some(Termination::Recommended)
            && !matches!(
                self.actions.last().map(|a| a.kind),
                Some(ActionKind::Recommendation)
            )
        {
            return Err("recommended episode does not end in a recommendation".into());
        }
        Ok(())
    }

    /// Serialize as a single JSONL line.
    pub fn to_jsonl_line(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }
}

/// Parse episodes from JSONL text, one object per non-empty line.
pub fn episodes_from_jsonl(text: &str) -> serde_json::Result<Vec<Episode>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patient_turn(index: usize) -> Turn {
        Turn::new(index, Role::Patient, format!("patient says {index}"))
    }

    fn doctor_turn(index: usize) -> Turn {
        Turn::new(index, Role::Doctor, format!("Question: probe {index}?"))
    }

    #[test]
    fn append_base_case() {
        let ep = Episode::new("s1");
        let ep = ep.append_turn(patient_turn(0)).unwrap();
        assert_eq!(ep.turns.len(), 1);
        assert_eq!(ep.turns[0].role, Role::Patient);
    }

    #[test]
    fn append_rejects_broken_alternation() {
        let ep = Episode::new("s1").append_turn(patient_turn(0)).unwrap();
        let err = ep
            .append_turn(Turn::new(1, Role::Patient, "again"))
            .unwrap_err();
        assert!(matches!(err, DialogueError::RoleOrderViolation { .. }));
    }

    #[test]
    fn append_rejects_index_gap() {
        let ep = Episode::new("s1")
            .append_turn(patient_turn(0))
            .unwrap()
            .append_turn(doctor_turn(1))
            .unwrap();
        // At length 2 the only admissible index is 2; a stale index is a gap
        // even when its role would have been valid where it points.
        let err = ep.append_turn(doctor_turn(1)).unwrap_err();
        assert_eq!(
            err,
            DialogueError::IndexGap {
                expected: 2,
                got: 1
            }
        );
    }

    #[test]
    fn terminated_episode_is_immutable() {
        let ep = Episode::new("s1")
            .append_turn(patient_turn(0))
            .unwrap()
            .finished(Termination::Error, None);
        assert_eq!(
            ep.append_turn(doctor_turn(1)).unwrap_err(),
            DialogueError::Terminated
        );
    }

    fn inquiry(content: &str) -> DoctorAction {
        DoctorAction {
            reasoning: "r".into(),
            kind: ActionKind::Inquiry,
            content: content.into(),
        }
    }

    fn recommendation(content: &str) -> DoctorAction {
        DoctorAction {
            reasoning: "r".into(),
            kind: ActionKind::Recommendation,
            content: content.into(),
        }
    }

    fn episode_with_doctor_turns(n: usize, last_recommends: bool) -> Episode {
        let mut ep = Episode::new("s1").append_turn(patient_turn(0)).unwrap();
        for k in 0..n {
            let index = ep.turns.len();
            ep = ep.append_turn(doctor_turn(index)).unwrap();
            let action = if last_recommends && k == n - 1 {
                recommendation("rest and fluids")
            } else {
                inquiry("how long?")
            };
            ep = ep.push_action(action).push_turn_reward(0.0);
            if !(last_recommends && k == n - 1) && k != n - 1 {
                let index = ep.turns.len();
                ep = ep.append_turn(patient_turn(index)).unwrap();
            }
        }
        ep
    }

    #[test]
    fn terminal_status_recommended() {
        let ep = episode_with_doctor_turns(2, true);
        assert_eq!(
            ep.is_terminal(&EpisodeConfig::default()),
            TerminalStatus::Recommended
        );
    }

    #[test]
    fn terminal_status_max_turns_at_cap() {
        let ep = episode_with_doctor_turns(10, false);
        assert_eq!(
            ep.is_terminal(&EpisodeConfig::default()),
            TerminalStatus::MaxTurns
        );
    }

    #[test]
    fn terminal_status_continue_below_cap() {
        let ep = episode_with_doctor_turns(3, false);
        assert_eq!(
            ep.is_terminal(&EpisodeConfig::default()),
            TerminalStatus::Continue
        );
    }

    #[test]
    fn is_terminal_is_idempotent() {
        let ep = episode_with_doctor_turns(10, false);
        let cfg = EpisodeConfig::default();
        assert_eq!(ep.is_terminal(&cfg), ep.is_terminal(&cfg));
    }

    #[test]
    fn transcript_renders_in_turn_order() {
        let ep = Episode::new("s1")
            .append_turn(Turn::new(0, Role::Patient, "I have a cough."))
            .unwrap()
            .append_turn(Turn::new(1, Role::Doctor, "Question: since when?"))
            .unwrap();
        assert_eq!(
            ep.observation().transcript(),
            "Patient: I have a cough.\nDoctor: Question: since when?"
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let ep = episode_with_doctor_turns(2, true).finished(Termination::Recommended, Some(1.0));
        let line = ep.to_jsonl_line().unwrap();
        let parsed = episodes_from_jsonl(&line).unwrap();
        assert_eq!(parsed, vec![ep]);
    }

    #[test]
    fn validate_accepts_complete_episode() {
        let ep = episode_with_doctor_turns(2, true).finished(Termination::Recommended, Some(0.5));
        ep.validate().unwrap();
    }

    proptest! {
        // Monotone history: each append makes the previous observation a
        // strict prefix of the new one.
        #[test]
        fn observations_grow_by_strict_prefix(n in 1usize..20) {
            let mut ep = Episode::new("p");
            for i in 0..n {
                let before = ep.observation();
                let turn = Turn::new(i, Role::expected_at(i), format!("t{i}"));
                ep = ep.append_turn(turn).unwrap();
                prop_assert!(before.is_strict_prefix_of(&ep.observation()));
            }
        }

        #[test]
        fn append_never_mutates_source(n in 1usize..10) {
            let mut ep = Episode::new("p");
            for i in 0..n {
                let snapshot = ep.clone();
                let turn = Turn::new(i, Role::expected_at(i), format!("t{i}"));
                let extended = ep.append_turn(turn).unwrap();
                prop_assert_eq!(&snapshot, &ep);
                ep = extended;
            }
        }
    }
}
