//! Dialogue quality control and pairwise human-evaluation aggregation.
//!
//! Generated dialogues are screened for patient persona breaks with a
//! rule-based scan (literal phrases or regexes, case-insensitive) over
//! patient turns, optionally backed by an LLM adherence score. Pairwise
//! judgments are aggregated into per-metric win/loss/tie tables; the win
//! rate is wins over decisive (non-tie) comparisons, defined as 0 when a
//! model has no decisive comparisons.

use crate::client::{ChatBackend, ChatMessage, ClientError};
use crate::dialogue::{Episode, Role};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid pattern {id}: {message}")]
    InvalidPattern { id: String, message: String },
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("judgment compares a model against itself: {0}")]
    SelfComparison(String),
    #[error("invalid verdict {0}")]
    InvalidVerdict(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("adherence judge reply has no adherence field in [0, 1]")]
    BadAdherenceReply,
}

/// How a rule matches turn text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RulePattern {
    /// Case-insensitive substring.
    Literal(String),
    /// Case-insensitive regular expression.
    Regex(String),
}

/// One adherence rule with a stable identifier for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdherenceRule {
    pub id: String,
    pub pattern: RulePattern,
}

impl AdherenceRule {
    pub fn literal(id: impl Into<String>, phrase: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            pattern: RulePattern::Literal(phrase.into()),
        }
    }

    fn compile(&self) -> Result<regex::Regex, EvalError> {
        let source = match &self.pattern {
            RulePattern::Literal(phrase) => regex::escape(phrase),
            RulePattern::Regex(source) => source.clone(),
        };
        regex::Regex::new(&format!("(?i){source}")).map_err(|e| EvalError::InvalidPattern {
            id: self.id.clone(),
            message: e.to_string(),
        })
    }
}

/// Persona-break phrases scanned for in patient turns by default.
pub fn default_adherence_rules() -> Vec<AdherenceRule> {
    vec![
        AdherenceRule::literal(
            "persona-break/large-language-model",
            "As a large language model",
        ),
        AdherenceRule::literal("persona-break/ai-language-model", "As an AI language model"),
        AdherenceRule::literal("persona-break/ai-assistant", "As an AI assistant"),
        AdherenceRule::literal("persona-break/i-am-an-ai", "I am an AI"),
        AdherenceRule::literal("persona-break/i-m-an-ai", "I'm an AI"),
        AdherenceRule::literal("persona-break/cannot-roleplay", "I cannot role-play"),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub turn_index: usize,
    pub matched_text: String,
}

/// Result of scanning one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdherenceReport {
    pub episode_id: String,
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Scan the episode's *patient* turns against the rule set and report
/// every hit. Pure and idempotent.
pub fn adherence_filter(
    episode: &Episode,
    rules: &[AdherenceRule],
) -> Result<AdherenceReport, EvalError> {
    scan_turns(episode, rules, Role::Patient)
}

/// Role-scoped scan; the default QC path scans patient turns only, but a
/// doctor-side rule set can reuse the same machinery.
pub fn scan_turns(
    episode: &Episode,
    rules: &[AdherenceRule],
    role: Role,
) -> Result<AdherenceReport, EvalError> {
    let compiled: Vec<(String, regex::Regex)> = rules
        .iter()
        .map(|r| r.compile().map(|rx| (r.id.clone(), rx)))
        .collect::<Result<_, _>>()?;
    let mut violations = Vec::new();
    for turn in episode.turns.iter().filter(|t| t.role == role) {
        for (rule_id, rx) in &compiled {
            for hit in rx.find_iter(&turn.content) {
                violations.push(Violation {
                    rule_id: rule_id.clone(),
                    turn_index: turn.index,
                    matched_text: hit.as_str().to_string(),
                });
            }
        }
    }
    Ok(AdherenceReport {
        episode_id: episode.scenario_id.clone(),
        passed: violations.is_empty(),
        violations,
    })
}

/// Ask an LLM judge for a patient-adherence score in [0, 1]; returns the
/// score and whether it clears the threshold.
pub fn llm_adherence_check(
    judge: &dyn ChatBackend,
    episode: &Episode,
    threshold: f64,
) -> Result<(f64, bool), EvalError> {
    let system = "You are a dialogue quality reviewer. Rate how strictly the patient speaker \
stays in character as a human patient: persona consistency, gradual information disclosure, \
and no assistant-like or mechanical language. First write a short analysis, then on the final \
line output one JSON object of the form {\"adherence\": 0.0} with a value between 0 and 1.";
    let data = format!("[Dialogue]\n{}", episode.observation().transcript());
    let reply = judge.chat_complete(&[ChatMessage::system(system), ChatMessage::user(data)])?;
    let score = extract_adherence(&reply).ok_or(EvalError::BadAdherenceReply)?;
    Ok((score, score >= threshold))
}

fn extract_adherence(text: &str) -> Option<f64> {
    for (idx, _) in text
        .match_indices('{')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
    {
        let mut stream =
            serde_json::Deserializer::from_str(&text[idx..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            if let Some(v) = map.get("adherence").and_then(|v| v.as_f64()) {
                if (0.0..=1.0).contains(&v) {
                    return Some(v);
                }
            }
        }
    }
    None
}

/// Qualitative metric of a pairwise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Coherence,
    Adherence,
    Clarity,
    Empathy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Coherence,
        Metric::Adherence,
        Metric::Clarity,
        Metric::Empathy,
    ];

    pub fn parse(name: &str) -> Result<Metric, EvalError> {
        match name.to_ascii_lowercase().as_str() {
            "coherence" => Ok(Metric::Coherence),
            "adherence" => Ok(Metric::Adherence),
            "clarity" => Ok(Metric::Clarity),
            "empathy" => Ok(Metric::Empathy),
            other => Err(EvalError::UnknownMetric(other.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Metric::Coherence => "coherence",
            Metric::Adherence => "adherence",
            Metric::Clarity => "clarity",
            Metric::Empathy => "empathy",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AWins,
    BWins,
    Tie,
}

/// One annotator decision comparing two models on one metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseJudgment {
    pub metric: Metric,
    pub model_a: String,
    pub model_b: String,
    pub verdict: Verdict,
}

impl PairwiseJudgment {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.model_a == self.model_b {
            return Err(EvalError::SelfComparison(self.model_a.clone()));
        }
        Ok(())
    }
}

/// Aggregated counters for one model under one metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub comparisons: u64,
    pub win_rate: f64,
}

/// Per-metric, per-model aggregation of pairwise judgments. Every metric
/// key is always present so downstream reports have a fixed shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateTable {
    pub metrics: BTreeMap<Metric, BTreeMap<String, ModelStats>>,
}

/// Replay the judgment list into win/loss/tie counters and win rates.
/// A decisive judgment yields exactly one win and one loss; ties increment
/// both models' tie counters; comparison counts grow either way.
pub fn aggregate_win_rates(judgments: &[PairwiseJudgment]) -> Result<WinRateTable, EvalError> {
    let mut metrics: BTreeMap<Metric, BTreeMap<String, ModelStats>> = BTreeMap::new();
    for metric in Metric::ALL {
        metrics.insert(metric, BTreeMap::new());
    }
    for judgment in judgments {
        judgment.validate()?;
        let table = metrics
            .get_mut(&judgment.metric)
            .expect("all metrics present");
        {
            let a = table.entry(judgment.model_a.clone()).or_default();
            a.comparisons += 1;
            match judgment.verdict {
                Verdict::AWins => a.wins += 1,
                Verdict::BWins => a.losses += 1,
                Verdict::Tie => a.ties += 1,
            }
        }
        {
            let b = table.entry(judgment.model_b.clone()).or_default();
            b.comparisons += 1;
            match judgment.verdict {
                Verdict::AWins => b.losses += 1,
                Verdict::BWins => b.wins += 1,
                Verdict::Tie => b.ties += 1,
            }
        }
    }
    for table in metrics.values_mut() {
        for stats in table.values_mut() {
            let decisive = stats.wins + stats.losses;
            stats.win_rate = if decisive == 0 {
                0.0
            } else {
                stats.wins as f64 / decisive as f64
            };
        }
    }
    Ok(WinRateTable { metrics })
}

/// Leaderboard for one metric: descending win rate, name as the tie-break
/// so output is deterministic.
pub fn rank_models(table: &WinRateTable, metric: Metric) -> Vec<String> {
    let Some(models) = table.metrics.get(&metric) else {
        return Vec::new();
    };
    let mut names: Vec<&String> = models.keys().collect();
    names.sort_by(|a, b| {
        models[*b]
            .win_rate
            .total_cmp(&models[*a].win_rate)
            .then_with(|| a.cmp(b))
    });
    names.into_iter().cloned().collect()
}

/// Leaderboard addressed by metric name, for CLI input.
pub fn rank_models_by_name(table: &WinRateTable, metric: &str) -> Result<Vec<String>, EvalError> {
    Ok(rank_models(table, Metric::parse(metric)?))
}

/// Load judgments from a `.jsonl` file (one object per line) or a `.csv`
/// file with a `metric,model_a,model_b,verdict` header. CSV cells must not
/// themselves contain commas; use JSONL for such model names.
pub fn load_judgments(path: &std::path::Path) -> Result<Vec<PairwiseJudgment>, JudgmentLoadError> {
    let text = std::fs::read_to_string(path)?;
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    let mut judgments = Vec::new();
    if is_csv {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        let expected = "metric,model_a,model_b,verdict";
        if header.trim() != expected {
            return Err(JudgmentLoadError::Malformed(format!(
                "csv header must be `{expected}`, got `{header}`"
            )));
        }
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(JudgmentLoadError::Malformed(format!(
                    "csv line {}: expected 4 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let verdict = match fields[3].to_ascii_lowercase().as_str() {
                "a_wins" => Verdict::AWins,
                "b_wins" => Verdict::BWins,
                "tie" => Verdict::Tie,
                other => {
                    return Err(JudgmentLoadError::Eval(EvalError::InvalidVerdict(
                        other.into(),
                    )))
                }
            };
            judgments.push(PairwiseJudgment {
                metric: Metric::parse(fields[0]).map_err(JudgmentLoadError::Eval)?,
                model_a: fields[1].to_string(),
                model_b: fields[2].to_string(),
                verdict,
            });
        }
    } else {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            judgments.push(serde_json::from_str(line)?);
        }
    }
    for j in &judgments {
        j.validate().map_err(JudgmentLoadError::Eval)?;
    }
    Ok(judgments)
}

#[derive(Debug, Error)]
pub enum JudgmentLoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Eval(EvalError),
    #[error("malformed judgment file: {0}")]
    Malformed(String),
}

/// Plain-text leaderboard over all metrics.
pub fn render_leaderboard(table: &WinRateTable) -> String {
    let mut out = String::new();
    for metric in Metric::ALL {
        let models = &table.metrics[&metric];
        if models.is_empty() {
            continue;
        }
        out.push_str(&format!("== {metric} ==\n"));
        for name in rank_models(table, metric) {
            let s = &models[&name];
            out.push_str(&format!(
                "{:<20} win_rate {:.4}  W {:>4}  L {:>4}  T {:>4}  C {:>4}\n",
                name, s.win_rate, s.wins, s.losses, s.ties, s.comparisons
            ));
        }
    }
    out
}
