//! Deterministic mock chat backend.
//!
//! The reply is a pure function of the configured seed and the message
//! list: a 64-bit hash of the concatenated message contents selects from
//! the scripted response table, and unmatched calls fall back to a fixed
//! templated reply for the backend's role. End-to-end episode tests are
//! therefore byte-stable without any network access.

use super::{check_request, ChatBackend, ChatMessage, ClientError};
use crate::util::hash64;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Which conversational role the mock stands in for; selects the fallback
/// reply family so unscripted calls still satisfy that role's grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockRole {
    Doctor,
    Patient,
    Judge,
}

/// One scripted reply. An entry matches when `contains` is absent or when
/// the concatenated message contents contain the pattern; the first
/// matching entry wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub reply: String,
}

pub struct MockBackend {
    seed: u64,
    role: MockRole,
    script: Vec<ScriptEntry>,
}

const DOCTOR_FALLBACK_QUESTIONS: &[&str] = &[
    "Could you describe when the symptoms first started?",
    "Have you noticed anything that makes the symptoms better or worse?",
    "Do you have any other symptoms, such as fever or fatigue?",
    "Are you currently taking any medications, including over-the-counter ones?",
    "Have you experienced anything like this before?",
    "How has this been affecting your sleep and daily activities?",
    "Is there any relevant family history I should know about?",
    "Have you had any recent travel, injuries, or changes in routine?",
];

const PATIENT_FALLBACK_REPLIES: &[&str] = &[
    "It started a few days ago and it has been getting a little worse.",
    "I'm not sure... it comes and goes, mostly in the evening.",
    "No, nothing like that, as far as I can tell.",
    "Yes, a little. I didn't think it was important, sorry.",
    "I haven't taken anything for it yet, I wanted to ask first.",
    "It's hard to describe. It just doesn't feel right.",
    "My family doesn't have anything like this, I think.",
];

impl MockBackend {
    pub fn new(role: MockRole, seed: u64) -> Self {
        Self {
            seed,
            role,
            script: Vec::new(),
        }
    }

    pub fn with_script(mut self, script: Vec<ScriptEntry>) -> Self {
        self.script = script;
        self
    }

    fn fallback(&self, transcript: &str, h: u64) -> String {
        match self.role {
            MockRole::Doctor => {
                let q = DOCTOR_FALLBACK_QUESTIONS
                    [(h % DOCTOR_FALLBACK_QUESTIONS.len() as u64) as usize];
                format!(
                    "<think>The picture is still incomplete; one more focused question should narrow it down.</think><answer> Question: {q}</answer>"
                )
            }
            MockRole::Patient => {
                let r =
                    PATIENT_FALLBACK_REPLIES[(h % PATIENT_FALLBACK_REPLIES.len() as u64) as usize];
                r.to_string()
            }
            MockRole::Judge => {
                if transcript.contains("\"adherence\"") {
                    // Quality-review calls ask for a single adherence score.
                    let value = (h % 101) as f64 / 100.0;
                    format!(
                        "The patient speaker stays broadly in character.\n{{\"adherence\": {value}}}"
                    )
                } else if transcript.contains("[Final Recommendation]") {
                    let verdict = match h % 3 {
                        0 => "0.0",
                        1 => "0.5",
                        _ => "1.0",
                    };
                    format!(
                        "The recommendation partially overlaps the expert reply; grading accordingly.\n{{\"verdict\": {verdict}}}"
                    )
                } else {
                    // Eight scores drawn from successive nibbles of the hash.
                    // The critical dimensions sit in [-1, 5] so rollouts mix
                    // veto and additive branches instead of drowning in
                    // penalties; the rest span the full [-5, 5] scale.
                    let critical = |i: u32| ((h >> (4 * i)) & 0xF) as i64 % 7 - 1;
                    let soft = |i: u32| ((h >> (4 * i)) & 0xF) as i64 % 11 - 5;
                    let obj = json!({
                        "safety": critical(0),
                        "reasoning": critical(1),
                        "accuracy": critical(2),
                        "completeness": soft(3),
                        "info_gathering": soft(4),
                        "faithfulness": soft(5),
                        "empathy": soft(6),
                        "humility": soft(7),
                    });
                    format!(
                        "Step-by-step analysis: the reply was reviewed against each criterion in turn.\n{obj}"
                    )
                }
            }
        }
    }
}

impl ChatBackend for MockBackend {
    fn chat_complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        check_request(messages)?;
        let mut transcript = String::new();
        for m in messages {
            transcript.push_str(&m.content);
            transcript.push('\u{1f}');
        }
        let h = hash64(self.seed, transcript.as_bytes());
        for entry in &self.script {
            let hit = match &entry.contains {
                Some(pattern) => transcript.contains(pattern.as_str()),
                None => true,
            };
            if hit {
                return Ok(entry.reply.clone());
            }
        }
        Ok(self.fallback(&transcript, h))
    }
}
