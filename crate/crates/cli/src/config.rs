//! Declarative run configuration.
//!
//! One TOML file drives a whole batch: scenario set, episode limits,
//! reward and retrieval constants (every default is spelled out so a run
//! is reproducible from the config alone), and one backend per role. Each
//! backend is independently a deterministic mock or an HTTP endpoint.
//! Environment variables override endpoint URLs and supply credentials:
//! `CONSULT_<ROLE>_ENDPOINT`, `CONSULT_<ROLE>_API_KEY`, and the shared
//! `CONSULT_API_KEY` fallback, with role one of DOCTOR, PATIENT, JUDGE.

use anyhow::{bail, Context, Result};
use consult_core::client::{
    BackendConfig, ChatBackend, HttpBackend, MockBackend, MockRole, ScriptEntry,
};
use consult_core::dialogue::{EpisodeConfig, PatientScenario};
use consult_core::experience::RetrievalConfig;
use consult_core::reward::RewardConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// How a rollout's scalar reward is formed for group construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupRewardMode {
    /// Terminal outcome reward plus the mean of the per-turn rewards.
    #[default]
    OutcomePlusMeanProcess,
    /// Terminal outcome reward alone.
    OutcomeOnly,
}

/// One role's backend: a scripted deterministic mock or an HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock {
        #[serde(default)]
        script: Vec<ScriptEntry>,
    },
    Http(BackendConfig),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock { script: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub parallelism: usize,
    pub rollouts_per_scenario: usize,
    /// Reject doctor replies without a `<think>` block.
    pub strict_format: bool,
    pub group_reward_mode: GroupRewardMode,
    /// Dimension of the hash embedder backing the experience store.
    pub embed_dim: usize,
    pub episode: EpisodeConfig,
    pub reward: RewardConfig,
    pub retrieval: RetrievalConfig,
    pub doctor: BackendSpec,
    pub patient: BackendSpec,
    pub judge: BackendSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario_path: PathBuf::from("scenarios.jsonl"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            parallelism: 1,
            rollouts_per_scenario: 1,
            strict_format: true,
            group_reward_mode: GroupRewardMode::default(),
            embed_dim: 256,
            episode: EpisodeConfig::default(),
            reward: RewardConfig::default(),
            retrieval: RetrievalConfig::default(),
            doctor: BackendSpec::default(),
            patient: BackendSpec::default(),
            judge: BackendSpec::default(),
        }
    }
}

/// The three conversational roles a backend can play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Doctor,
    Patient,
    Judge,
}

impl AgentRole {
    fn env_tag(self) -> &'static str {
        match self {
            AgentRole::Doctor => "DOCTOR",
            AgentRole::Patient => "PATIENT",
            AgentRole::Judge => "JUDGE",
        }
    }

    fn mock_role(self) -> MockRole {
        match self {
            AgentRole::Doctor => MockRole::Doctor,
            AgentRole::Patient => MockRole::Patient,
            AgentRole::Judge => MockRole::Judge,
        }
    }
}

impl RunConfig {
    /// Parse a TOML config, apply environment overrides, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, |_| {})
    }

    /// Like [`RunConfig::load`], with a hook applying caller overrides
    /// (CLI flags) between the environment pass and validation.
    pub fn load_with(path: &Path, overrides: impl FnOnce(&mut RunConfig)) -> Result<Self> {
        let mut config = Self::load_unchecked(path)?;
        overrides(&mut config);
        config.validate()?;
        Ok(config)
    }

    /// Parse and apply environment overrides without run validation, for
    /// commands that only read constants or an existing store and should
    /// not require the scenario file to be present.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.apply_env_overrides();
        Ok(config)
    }

    pub fn apply_env_overrides(&mut self) {
        for (role, spec) in [
            (AgentRole::Doctor, &mut self.doctor),
            (AgentRole::Patient, &mut self.patient),
            (AgentRole::Judge, &mut self.judge),
        ] {
            if let BackendSpec::Http(http) = spec {
                let tag = role.env_tag();
                if let Ok(url) = std::env::var(format!("CONSULT_{tag}_ENDPOINT")) {
                    http.endpoint_url = url;
                }
                if let Ok(key) = std::env::var(format!("CONSULT_{tag}_API_KEY")) {
                    http.api_key = Some(key);
                } else if http.api_key.is_none() {
                    if let Ok(key) = std::env::var("CONSULT_API_KEY") {
                        http.api_key = Some(key);
                    }
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scenario_path.exists() {
            bail!(
                "scenario_path {} does not exist",
                self.scenario_path.display()
            );
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.rollouts_per_scenario == 0 {
            bail!("rollouts_per_scenario must be at least 1");
        }
        if self.episode.max_turns == 0 {
            bail!("episode.max_turns must be at least 1");
        }
        if self.embed_dim == 0 {
            bail!("embed_dim must be at least 1");
        }
        if self.retrieval.top_k > self.retrieval.top_n {
            bail!(
                "retrieval.top_k ({}) must not exceed retrieval.top_n ({})",
                self.retrieval.top_k,
                self.retrieval.top_n
            );
        }
        self.reward
            .validate()
            .map_err(|e| anyhow::anyhow!("reward config: {e}"))?;
        Ok(())
    }

    /// Construct the backend for a role. Mocks get the provided seed so
    /// parallel rollouts draw from independent deterministic streams; HTTP
    /// backends ignore it.
    pub fn make_backend(&self, role: AgentRole, seed: u64) -> Arc<dyn ChatBackend> {
        let spec = match role {
            AgentRole::Doctor => &self.doctor,
            AgentRole::Patient => &self.patient,
            AgentRole::Judge => &self.judge,
        };
        match spec {
            BackendSpec::Mock { script } => {
                Arc::new(MockBackend::new(role.mock_role(), seed).with_script(script.clone()))
            }
            BackendSpec::Http(http) => {
                let mut http = http.clone();
                // The policy decodes at the episode's temperature unless
                // its backend pins one explicitly.
                if role == AgentRole::Doctor && http.temperature.is_none() {
                    http.temperature = Some(self.episode.decode_temperature);
                }
                Arc::new(HttpBackend::new(http))
            }
        }
    }
}

/// Load and validate a scenario set from JSONL.
pub fn load_scenarios(path: &Path) -> Result<Vec<PatientScenario>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenarios {}", path.display()))?;
    let mut scenarios = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scenario: PatientScenario =
            serde_json::from_str(line).with_context(|| format!("scenario line {}", lineno + 1))?;
        if scenario.persona.trim().is_empty() || scenario.ground_truth.trim().is_empty() {
            bail!(
                "scenario {} needs a persona and a ground_truth",
                scenario.id
            );
        }
        scenarios.push(scenario);
    }
    if scenarios.is_empty() {
        bail!("scenario file {} is empty", path.display());
    }
    let mut raw_ids = BTreeSet::new();
    let mut file_ids = BTreeSet::new();
    for s in &scenarios {
        if !raw_ids.insert(s.id.clone()) {
            bail!("duplicate scenario id {}", s.id);
        }
        if !file_ids.insert(sanitize_id(&s.id)) {
            bail!(
                "scenario id {} collides with another after sanitizing",
                s.id
            );
        }
    }
    Ok(scenarios)
}

/// File-name-safe form of a scenario id.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}
