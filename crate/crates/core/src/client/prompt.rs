//! Prompt assembly for the doctor, patient, and judge roles.
//!
//! The system prompts are versioned text assets compiled into the binary;
//! builders only arrange them with the dialogue history and retrieved
//! context. All builders are pure: identical inputs produce byte-identical
//! message lists.

use super::{ChatMessage, RetrievedContext};
use crate::dialogue::{Observation, PatientScenario, Role};
use thiserror::Error;

/// Policy (doctor) system prompt.
pub const DOCTOR_SYSTEM_PROMPT: &str = include_str!("../../prompts/doctor_system.txt");
/// Simulated-patient system prompt.
pub const PATIENT_SYSTEM_PROMPT: &str = include_str!("../../prompts/patient_system.txt");
/// Turn-level evaluator rubric.
pub const JUDGE_TURN_SYSTEM_PROMPT: &str = include_str!("../../prompts/judge_turn_system.txt");
/// Output-format instruction appended to the turn evaluator rubric.
pub const JUDGE_TURN_OUTPUT_FORMAT: &str = include_str!("../../prompts/judge_turn_output.txt");
/// Outcome (final-recommendation) evaluator prompt.
pub const JUDGE_OUTCOME_SYSTEM_PROMPT: &str =
    include_str!("../../prompts/judge_outcome_system.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("observation has no patient turn to act on")]
    EmptyObservation,
}

/// Render retrieved experiences as a delimited block shown to the policy
/// ahead of the dialogue history: each entry carries the prior state, the
/// action taken, and the reward it earned, in retrieval order.
fn experience_block(ctx: &RetrievedContext) -> String {
    let mut block = String::from(
        "[Past Experience]\nReference consultations retrieved from earlier sessions. Each shows a dialogue state, the action taken next, and the reward that action earned.\n",
    );
    for (i, exp) in ctx.experiences.iter().enumerate() {
        block.push_str(&format!(
            "\nExperience {} (reward {}):\nState:\n{}\nAction: {}\n",
            i + 1,
            exp.reward,
            exp.state_text,
            exp.action_text
        ));
    }
    block.push_str("[End Past Experience]");
    block
}

/// Build the policy prompt: the verbatim doctor system prompt, then the
/// dialogue history with patient turns as user messages and prior doctor
/// turns as assistant messages. Retrieved experiences, when present, are
/// prepended to the first user message as a delimited block.
pub fn build_doctor_prompt(
    obs: &Observation,
    ctx: &RetrievedContext,
) -> Result<Vec<ChatMessage>, PromptError> {
    if !obs.turns.iter().any(|t| t.role == Role::Patient) {
        return Err(PromptError::EmptyObservation);
    }
    let mut messages = vec![ChatMessage::system(DOCTOR_SYSTEM_PROMPT)];
    let mut first_user = true;
    for turn in &obs.turns {
        match turn.role {
            Role::Patient => {
                let content = if first_user && !ctx.is_empty() {
                    format!("{}\n\n{}", experience_block(ctx), turn.content)
                } else {
                    turn.content.clone()
                };
                first_user = false;
                messages.push(ChatMessage::user(content));
            }
            Role::Doctor => messages.push(ChatMessage::assistant(turn.content.clone())),
        }
    }
    Ok(messages)
}

/// Build the simulated-patient prompt: the verbatim patient system prompt
/// plus the persona (which carries the hidden condition), then the history
/// with doctor turns as user messages and patient turns as assistant
/// messages. The expert ground-truth reply is never included.
pub fn build_patient_prompt(scenario: &PatientScenario, obs: &Observation) -> Vec<ChatMessage> {
    let system = format!(
        "{}\n\n[Patient Persona]\n{}",
        PATIENT_SYSTEM_PROMPT.trim_end(),
        scenario.persona
    );
    let mut messages = vec![ChatMessage::system(system)];
    for turn in &obs.turns {
        match turn.role {
            Role::Doctor => messages.push(ChatMessage::user(turn.content.clone())),
            Role::Patient => messages.push(ChatMessage::assistant(turn.content.clone())),
        }
    }
    messages
}

/// Build the turn-evaluator prompt. The data block carries, in order, the
/// conversation history, the expert reply, and the doctor's full tagged
/// response under evaluation.
pub fn build_judge_turn_prompt(
    obs: &Observation,
    ground_truth: &str,
    response: &str,
) -> Vec<ChatMessage> {
    let system = format!(
        "{}\n{}",
        JUDGE_TURN_SYSTEM_PROMPT.trim_end(),
        JUDGE_TURN_OUTPUT_FORMAT.trim_end()
    );
    let data = format!(
        "[BEGIN DATA]\n\n[Conversation History]\n{}\n\n[Ground Truth Doctor Reply] (for reference)\n{}\n\n[AI Medical Assistant Full Response] (to be evaluated)\n{}\n\n[END DATA]",
        obs.transcript(),
        ground_truth,
        response
    );
    vec![ChatMessage::system(system), ChatMessage::user(data)]
}

/// Build the outcome-evaluator prompt for grading the final recommendation.
pub fn build_judge_outcome_prompt(
    final_recommendation: &str,
    ground_truth: &str,
) -> Vec<ChatMessage> {
    let data = format!(
        "[BEGIN DATA]\n\n[Final Recommendation]\n{}\n\n[Ground Truth Doctor Reply]\n{}\n\n[END DATA]",
        final_recommendation, ground_truth
    );
    vec![
        ChatMessage::system(JUDGE_OUTCOME_SYSTEM_PROMPT.trim_end().to_string()),
        ChatMessage::user(data),
    ]
}
