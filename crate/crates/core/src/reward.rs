//! Two-tiered reward computation.
//!
//! Every doctor turn is scored by a judge across eight dimensions on an
//! integer scale of -5 to +5. The turn reward applies a hierarchical veto
//! first: a negative safety score returns the critical penalty outright, a
//! negative reasoning or accuracy score returns the severe penalty, and only
//! then is the normalized weighted sum computed and clipped. At episode end
//! a ternary outcome reward in {0.0, 0.5, 1.0} grades the final
//! recommendation against the expert reply.

use crate::client::{
    parse::{parse_judge_response, parse_outcome_verdict, JudgeFormatError},
    prompt::{build_judge_outcome_prompt, build_judge_turn_prompt},
    ChatBackend, ClientError,
};
use crate::dialogue::Observation;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The eight judged dimensions of one doctor turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub safety: i32,
    pub reasoning: i32,
    pub accuracy: i32,
    pub completeness: i32,
    pub info_gathering: i32,
    pub faithfulness: i32,
    pub empathy: i32,
    pub humility: i32,
}

impl DimensionScores {
    pub fn uniform(value: i32) -> Self {
        Self {
            safety: value,
            reasoning: value,
            accuracy: value,
            completeness: value,
            info_gathering: value,
            faithfulness: value,
            empathy: value,
            humility: value,
        }
    }

    pub fn as_array(&self) -> [(&'static str, i32); 8] {
        [
            ("safety", self.safety),
            ("reasoning", self.reasoning),
            ("accuracy", self.accuracy),
            ("completeness", self.completeness),
            ("info_gathering", self.info_gathering),
            ("faithfulness", self.faithfulness),
            ("empathy", self.empathy),
            ("humility", self.humility),
        ]
    }
}

/// Per-dimension weights of the additive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionWeights {
    pub safety: f64,
    pub reasoning: f64,
    pub accuracy: f64,
    pub info_gathering: f64,
    pub faithfulness: f64,
    pub completeness: f64,
    pub empathy: f64,
    pub humility: f64,
}

impl Default for DimensionWeights {
    fn default() -> Self {
        Self {
            safety: 1.0,
            reasoning: 1.0,
            accuracy: 1.0,
            info_gathering: 0.8,
            faithfulness: 0.7,
            completeness: 0.7,
            empathy: 0.5,
            humility: 0.5,
        }
    }
}

impl DimensionWeights {
    pub fn sum(&self) -> f64 {
        self.safety
            + self.reasoning
            + self.accuracy
            + self.info_gathering
            + self.faithfulness
            + self.completeness
            + self.empathy
            + self.humility
    }

    /// (score, weight) pairs for the weighted sum.
    fn paired_with(&self, s: &DimensionScores) -> [(i32, f64); 8] {
        [
            (s.safety, self.safety),
            (s.reasoning, self.reasoning),
            (s.accuracy, self.accuracy),
            (s.info_gathering, self.info_gathering),
            (s.faithfulness, self.faithfulness),
            (s.completeness, self.completeness),
            (s.empathy, self.empathy),
            (s.humility, self.humility),
        ]
    }
}

/// Veto thresholds, penalties, scale bounds, and dimension weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Failure threshold: any critical dimension strictly below it vetoes.
    pub epsilon: f64,
    /// Penalty for a safety violation.
    pub r_crit: f64,
    /// Penalty for a reasoning or accuracy violation.
    pub r_sev: f64,
    /// Maximum magnitude of a dimension score.
    pub s_max: f64,
    /// Reward clipping bounds.
    pub r_min: f64,
    pub r_max: f64,
    pub weights: DimensionWeights,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            r_crit: -1.0,
            r_sev: -0.75,
            s_max: 5.0,
            r_min: -1.0,
            r_max: 1.0,
            weights: DimensionWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("dimension {field} score {value} outside [-{bound}, {bound}]")]
    InvalidScore {
        field: &'static str,
        value: i32,
        bound: f64,
    },
    #[error("weight sum is zero; the additive model is degenerate")]
    DegenerateWeights,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let w = &self.weights;
        for (name, value) in [
            ("safety", w.safety),
            ("reasoning", w.reasoning),
            ("accuracy", w.accuracy),
            ("info_gathering", w.info_gathering),
            ("faithfulness", w.faithfulness),
            ("completeness", w.completeness),
            ("empathy", w.empathy),
            ("humility", w.humility),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(RewardError::InvalidConfig(format!(
                    "weight {name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if w.sum() == 0.0 {
            return Err(RewardError::DegenerateWeights);
        }
        if !self.s_max.is_finite() || self.s_max <= 0.0 {
            return Err(RewardError::InvalidConfig("s_max must be positive".into()));
        }
        if !self.r_min.is_finite() || !self.r_max.is_finite() || self.r_min >= self.r_max {
            return Err(RewardError::InvalidConfig(
                "r_min must be below r_max".into(),
            ));
        }
        Ok(())
    }
}

/// Terminal grade of the final recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correctness {
    Incorrect,
    Partial,
    Correct,
}

/// Terminal outcome reward: 1.0 correct, 0.5 partially correct, 0.0 incorrect.
pub fn outcome_reward(c: Correctness) -> f64 {
    match c {
        Correctness::Correct => 1.0,
        Correctness::Partial => 0.5,
        Correctness::Incorrect => 0.0,
    }
}

/// Veto-gated, weighted, normalized, clipped process reward for one turn.
///
/// Checks run in fixed order: the safety veto, then the reasoning/accuracy
/// veto, then `clip(sum(w_i * s_i) / (s_max * sum(w_i)), r_min, r_max)`.
/// A score vector violating both vetos returns the critical penalty.
pub fn process_reward(scores: &DimensionScores, cfg: &RewardConfig) -> Result<f64, RewardError> {
    cfg.validate()?;
    for (field, value) in scores.as_array() {
        if (value as f64).abs() > cfg.s_max {
            return Err(RewardError::InvalidScore {
                field,
                value,
                bound: cfg.s_max,
            });
        }
    }
    if (scores.safety as f64) < cfg.epsilon {
        return Ok(cfg.r_crit);
    }
    if (scores.reasoning as f64) < cfg.epsilon || (scores.accuracy as f64) < cfg.epsilon {
        return Ok(cfg.r_sev);
    }
    let weighted: f64 = cfg
        .weights
        .paired_with(scores)
        .iter()
        .map(|(s, w)| *s as f64 * w)
        .sum();
    let normalized = weighted / (cfg.s_max * cfg.weights.sum());
    Ok(normalized.clamp(cfg.r_min, cfg.r_max))
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Format(#[from] JudgeFormatError),
}

/// Score one doctor turn with the judge backend.
///
/// The judge sees the dialogue history before the turn, the expert reply
/// for the case, and the doctor's full tagged response, then emits an
/// analysis followed by a JSON score object.
pub fn judge_turn(
    judge: &dyn ChatBackend,
    obs: &Observation,
    ground_truth: &str,
    response: &str,
) -> Result<DimensionScores, JudgeError> {
    let messages = build_judge_turn_prompt(obs, ground_truth, response);
    let reply = judge.chat_complete(&messages)?;
    Ok(parse_judge_response(&reply)?)
}

/// Grade the final recommendation with the judge backend.
pub fn judge_outcome(
    judge: &dyn ChatBackend,
    final_recommendation: &str,
    ground_truth: &str,
) -> Result<Correctness, JudgeError> {
    let messages = build_judge_outcome_prompt(final_recommendation, ground_truth);
    let reply = judge.chat_complete(&messages)?;
    Ok(parse_outcome_verdict(&reply)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight-line re-evaluation of the additive model, written term by
    /// term with the default constants. Kept independent of the production
    /// path so it can serve as an oracle.
    fn oracle_default(s: &DimensionScores) -> f64 {
        if (s.safety as f64) < 0.0 {
            return -1.0;
        }
        if (s.reasoning as f64) < 0.0 || (s.accuracy as f64) < 0.0 {
            return -0.75;
        }
        let weighted = 1.0 * s.safety as f64
            + 1.0 * s.reasoning as f64
            + 1.0 * s.accuracy as f64
            + 0.8 * s.info_gathering as f64
            + 0.7 * s.faithfulness as f64
            + 0.7 * s.completeness as f64
            + 0.5 * s.empathy as f64
            + 0.5 * s.humility as f64;
        let sum_w = 1.0 + 1.0 + 1.0 + 0.8 + 0.7 + 0.7 + 0.5 + 0.5;
        (weighted / (5.0 * sum_w)).clamp(-1.0, 1.0)
    }

    fn scores(v: [i32; 8]) -> DimensionScores {
        DimensionScores {
            safety: v[0],
            reasoning: v[1],
            accuracy: v[2],
            completeness: v[3],
            info_gathering: v[4],
            faithfulness: v[5],
            empathy: v[6],
            humility: v[7],
        }
    }

    #[test]
    fn perfect_scores_map_to_one() {
        let r = process_reward(&DimensionScores::uniform(5), &RewardConfig::default()).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn safety_veto_returns_critical_penalty() {
        let mut s = DimensionScores::uniform(5);
        s.safety = -1;
        let r = process_reward(&s, &RewardConfig::default()).unwrap();
        assert_eq!(r, -1.0);
    }

    #[test]
    fn reasoning_veto_returns_severe_penalty() {
        let mut s = DimensionScores::uniform(5);
        s.safety = 2;
        s.reasoning = -2;
        let r = process_reward(&s, &RewardConfig::default()).unwrap();
        assert_eq!(r, -0.75);
    }

    #[test]
    fn weighted_sum_matches_term_by_term_oracle() {
        // Field order: safety, reasoning, accuracy, completeness,
        // info_gathering, faithfulness, empathy, humility.
        let s = scores([3, 4, 2, 1, 0, 2, 5, 1]);
        let expected = (1.0 * 3.0
            + 1.0 * 4.0
            + 1.0 * 2.0
            + 0.8 * 0.0
            + 0.7 * 2.0
            + 0.7 * 1.0
            + 0.5 * 5.0
            + 0.5 * 1.0)
            / (5.0 * 6.2);
        let r = process_reward(&s, &RewardConfig::default()).unwrap();
        assert!((r - expected).abs() < 1e-15);
        assert!((r - oracle_default(&s)).abs() < 1e-15);
        assert!((r - 14.1 / 31.0).abs() < 1e-15);
    }

    #[test]
    fn zero_scores_yield_zero() {
        let r = process_reward(&DimensionScores::uniform(0), &RewardConfig::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn zero_does_not_trip_veto() {
        // The failure threshold comparison is strict, so a score of exactly
        // zero on a critical dimension stays in the additive branch.
        let mut s = DimensionScores::uniform(5);
        s.safety = 0;
        s.reasoning = 0;
        s.accuracy = 0;
        let r = process_reward(&s, &RewardConfig::default()).unwrap();
        assert!(r > 0.0);
    }

    #[test]
    fn out_of_range_score_rejected() {
        let mut s = DimensionScores::uniform(0);
        s.empathy = 7;
        assert!(matches!(
            process_reward(&s, &RewardConfig::default()),
            Err(RewardError::InvalidScore {
                field: "empathy",
                ..
            })
        ));
    }

    #[test]
    fn degenerate_weights_rejected() {
        let cfg = RewardConfig {
            weights: DimensionWeights {
                safety: 0.0,
                reasoning: 0.0,
                accuracy: 0.0,
                info_gathering: 0.0,
                faithfulness: 0.0,
                completeness: 0.0,
                empathy: 0.0,
                humility: 0.0,
            },
            ..RewardConfig::default()
        };
        assert!(matches!(
            process_reward(&DimensionScores::uniform(1), &cfg),
            Err(RewardError::DegenerateWeights)
        ));
    }

    #[test]
    fn outcome_reward_values_are_exact() {
        assert_eq!(outcome_reward(Correctness::Correct), 1.0);
        assert_eq!(outcome_reward(Correctness::Partial), 0.5);
        assert_eq!(outcome_reward(Correctness::Incorrect), 0.0);
    }

    fn judge_fixture_obs() -> crate::dialogue::Observation {
        crate::dialogue::Observation {
            turns: vec![crate::dialogue::Turn::new(
                0,
                crate::dialogue::Role::Patient,
                "I have a cough.",
            )],
        }
    }

    #[test]
    fn judge_turn_with_all_zero_scores_yields_zero_reward() {
        use crate::client::{MockBackend, MockRole, ScriptEntry};
        let judge = MockBackend::new(MockRole::Judge, 0).with_script(vec![ScriptEntry {
            contains: None,
            reply: r#"Reviewed each criterion. {"safety":0,"reasoning":0,"accuracy":0,"completeness":0,"info_gathering":0,"faithfulness":0,"empathy":0,"humility":0}"#.into(),
        }]);
        let scores = judge_turn(
            &judge,
            &judge_fixture_obs(),
            "expert reply",
            "<think>r</think>",
        )
        .unwrap();
        assert_eq!(scores, DimensionScores::uniform(0));
        assert_eq!(
            process_reward(&scores, &RewardConfig::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn judge_turn_propagates_malformed_judge_output() {
        use crate::client::{MockBackend, MockRole, ScriptEntry};
        let judge = MockBackend::new(MockRole::Judge, 0).with_script(vec![ScriptEntry {
            contains: None,
            reply: "no scores here, only prose".into(),
        }]);
        let err = judge_turn(
            &judge,
            &judge_fixture_obs(),
            "expert reply",
            "<think>r</think>",
        )
        .unwrap_err();
        assert!(matches!(err, JudgeError::Format(_)));
    }

    #[test]
    fn judge_outcome_maps_scripted_verdict() {
        use crate::client::{MockBackend, MockRole, ScriptEntry};
        let judge = MockBackend::new(MockRole::Judge, 0).with_script(vec![ScriptEntry {
            contains: None,
            reply: "Close but incomplete. {\"verdict\": 0.5}".into(),
        }]);
        let c = judge_outcome(&judge, "rest and fluids", "expert reply").unwrap();
        assert_eq!(c, Correctness::Partial);
    }

    fn any_scores() -> impl Strategy<Value = DimensionScores> {
        proptest::array::uniform8(-5i32..=5).prop_map(scores)
    }

    proptest! {
        #[test]
        fn matches_oracle_everywhere(s in any_scores()) {
            let cfg = RewardConfig::default();
            let r = process_reward(&s, &cfg).unwrap();
            prop_assert!((r - oracle_default(&s)).abs() < 1e-12);
        }

        #[test]
        fn output_always_in_bounds(s in any_scores()) {
            let cfg = RewardConfig::default();
            let r = process_reward(&s, &cfg).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
        }

        #[test]
        fn safety_veto_dominates(mut s in any_scores(), bad in -5i32..0) {
            s.safety = bad;
            let r = process_reward(&s, &RewardConfig::default()).unwrap();
            prop_assert_eq!(r, -1.0);
        }

        // With every dimension at or above the threshold, bumping one
        // dimension up never lowers the reward.
        #[test]
        fn monotone_off_veto(base in proptest::array::uniform8(0i32..=4), idx in 0usize..8) {
            let cfg = RewardConfig::default();
            let lo = scores(base);
            let mut raised = base;
            raised[idx] += 1;
            let hi = scores(raised);
            let r_lo = process_reward(&lo, &cfg).unwrap();
            let r_hi = process_reward(&hi, &cfg).unwrap();
            prop_assert!(r_hi >= r_lo - 1e-15);
        }

        // With the three critical dimensions pinned at zero (so neither the
        // vector nor its negation vetoes), negating the remaining scores
        // negates the normalized sum.
        #[test]
        fn scale_symmetry(tail in proptest::array::uniform5(-5i32..=5)) {
            let cfg = RewardConfig::default();
            let pos = scores([0, 0, 0, tail[0], tail[1], tail[2], tail[3], tail[4]]);
            let neg = scores([0, 0, 0, -tail[0], -tail[1], -tail[2], -tail[3], -tail[4]]);
            let r_pos = process_reward(&pos, &cfg).unwrap();
            let r_neg = process_reward(&neg, &cfg).unwrap();
            prop_assert!((r_pos + r_neg).abs() < 1e-12);
        }
    }
}
