//! Acceptance suite: one test per release criterion, each printing a
//! single `[acceptance] criterion N (...): PASS|FAIL` line. Every expected
//! value is computed by an independent straight-line oracle inside this
//! file, never by the code path under test.
//!
//! Run with `cargo test -p consult-cli --test acceptance -- --nocapture`.

use consult_cli::config::{BackendSpec, RunConfig};
use consult_cli::orchestrator::run_batch;
use consult_core::client::parse::{parse_doctor_response, render_doctor_action, FormatViolation};
use consult_core::client::ScriptEntry;
use consult_core::dialogue::{ActionKind, DoctorAction, Episode, Role, Turn};
use consult_core::eval::{
    adherence_filter, aggregate_win_rates, default_adherence_rules, load_judgments, rank_models,
    Metric, Verdict,
};
use consult_core::experience::{
    EmbedError, Embedder, ExperienceRepository, HashEmbedder, NewExperience, RerankError, Reranker,
    RetrievalConfig,
};
use consult_core::grpo::{grpo_loss, GrpoGroup};
use consult_core::reward::{process_reward, DimensionScores, RewardConfig};
use consult_core::util::{hash64, SplitMix64};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Collects checks for one criterion and prints exactly one verdict line.
struct Gate {
    number: usize,
    name: &'static str,
    failure: Option<String>,
}

impl Gate {
    fn new(number: usize, name: &'static str) -> Self {
        Self {
            number,
            name,
            failure: None,
        }
    }

    fn check(&mut self, condition: bool, message: impl FnOnce() -> String) {
        if self.failure.is_none() && !condition {
            self.failure = Some(message());
        }
    }

    fn finish(self) {
        match &self.failure {
            None => println!(
                "[acceptance] criterion {} ({}): PASS",
                self.number, self.name
            ),
            Some(msg) => {
                println!(
                    "[acceptance] criterion {} ({}): FAIL: {}",
                    self.number, self.name, msg
                );
                panic!("criterion {} ({}) failed: {}", self.number, self.name, msg);
            }
        }
    }
}

fn random_scores(rng: &mut SplitMix64) -> DimensionScores {
    DimensionScores {
        safety: rng.range_i64(-5, 5) as i32,
        reasoning: rng.range_i64(-5, 5) as i32,
        accuracy: rng.range_i64(-5, 5) as i32,
        completeness: rng.range_i64(-5, 5) as i32,
        info_gathering: rng.range_i64(-5, 5) as i32,
        faithfulness: rng.range_i64(-5, 5) as i32,
        empathy: rng.range_i64(-5, 5) as i32,
        humility: rng.range_i64(-5, 5) as i32,
    }
}

/// Straight-line re-evaluation of the veto-gated additive reward with the
/// published constants, written term by term.
fn reward_oracle(s: &DimensionScores) -> f64 {
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

#[test]
fn criterion_01_reward_exactness() {
    let mut gate = Gate::new(1, "reward exactness");
    let cfg = RewardConfig::default();
    let mut rng = SplitMix64::new(0xACCE01);
    let started = Instant::now();
    let (mut crit, mut sev, mut additive) = (0u32, 0u32, 0u32);
    for i in 0..10_000 {
        let s = random_scores(&mut rng);
        if s.safety < 0 {
            crit += 1;
        } else if s.reasoning < 0 || s.accuracy < 0 {
            sev += 1;
        } else {
            additive += 1;
        }
        let got = process_reward(&s, &cfg).unwrap();
        let expected = reward_oracle(&s);
        gate.check((got - expected).abs() < 1e-12, || {
            format!("vector {i}: got {got}, oracle {expected}")
        });
    }
    let elapsed = started.elapsed();
    gate.check(crit > 0 && sev > 0 && additive > 0, || {
        format!("branch coverage crit={crit} sev={sev} additive={additive}")
    });
    gate.check(elapsed.as_secs_f64() < 5.0, || {
        format!("10k vectors took {elapsed:?}, budget 5s")
    });
    gate.finish();
}

#[test]
fn criterion_02_veto_dominance() {
    let mut gate = Gate::new(2, "veto dominance");
    let cfg = RewardConfig::default();
    let mut rng = SplitMix64::new(0xACCE02);
    for _ in 0..1_000 {
        let mut s = random_scores(&mut rng);
        s.safety = rng.range_i64(-5, -1) as i32;
        let got = process_reward(&s, &cfg).unwrap();
        gate.check(got == -1.0, || {
            format!("safety {} returned {got}, expected exactly -1.0", s.safety)
        });
    }
    for _ in 0..1_000 {
        let mut s = random_scores(&mut rng);
        s.safety = rng.range_i64(0, 5) as i32;
        if s.reasoning >= 0 && s.accuracy >= 0 {
            if rng.below(2) == 0 {
                s.reasoning = rng.range_i64(-5, -1) as i32;
            } else {
                s.accuracy = rng.range_i64(-5, -1) as i32;
            }
        }
        let got = process_reward(&s, &cfg).unwrap();
        gate.check(got == -0.75, || {
            format!(
                "safety {} reasoning {} accuracy {} returned {got}, expected exactly -0.75",
                s.safety, s.reasoning, s.accuracy
            )
        });
    }
    gate.finish();
}

/// Test-only embedder, independent of the library's hash embedder: each
/// text maps to a fixed pseudo-random vector.
struct ScriptedEmbedder {
    dim: usize,
}

impl Embedder for ScriptedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut rng = SplitMix64::new(hash64(0xE5BED, text.as_bytes()));
        Ok((0..self.dim)
            .map(|_| (rng.next_f64() * 2.0 - 1.0) as f32)
            .collect())
    }
}

/// Test-only reranker: a deterministic score per (query, candidate) pair.
struct ScriptedReranker;

impl Reranker for ScriptedReranker {
    fn rerank_score(&self, query: &str, candidate: &str) -> Result<f64, RerankError> {
        let mut key = Vec::with_capacity(query.len() + candidate.len() + 1);
        key.extend_from_slice(query.as_bytes());
        key.push(0x1f);
        key.extend_from_slice(candidate.as_bytes());
        Ok(SplitMix64::new(hash64(0x5C0FE, &key)).next_f64())
    }
}

fn cosine_reference(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Exhaustive straight-line reference of the three-stage pipeline: combined
/// scoring over the full store, top-N selection with id tie-breaks, scripted
/// rerank ordering, dynamic-threshold and novelty filters, top-k truncation.
fn reference_retrieve(
    tuples: &[(u64, String, f64)],
    embedder: &dyn Embedder,
    reranker: &dyn Reranker,
    query: &str,
    cfg: &RetrievalConfig,
) -> Vec<u64> {
    let q = embedder.embed(query).unwrap();
    let mut scored: Vec<(u64, String, f64, f64)> = tuples
        .iter()
        .map(|(id, state, reward)| {
            let emb = embedder.embed(state).unwrap();
            let combined = cosine_reference(&q, &emb) + cfg.alpha * reward;
            (*id, state.clone(), *reward, combined)
        })
        .collect();
    scored.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)));
    scored.truncate(cfg.top_n);
    if scored.is_empty() {
        return Vec::new();
    }
    let mut reranked: Vec<(u64, String, f64, f64)> = scored
        .into_iter()
        .map(|(id, state, reward, _)| {
            let score = reranker.rerank_score(query, &state).unwrap();
            (id, state, reward, score)
        })
        .collect();
    reranked.sort_by(|a, b| b.3.total_cmp(&a.3));
    let n = reranked.len() as f64;
    let mean = reranked.iter().map(|r| r.2).sum::<f64>() / n;
    let sigma = (reranked
        .iter()
        .map(|r| (r.2 - mean) * (r.2 - mean))
        .sum::<f64>()
        / n)
        .sqrt();
    let tau_dynamic = mean + cfg.beta_std * sigma;
    reranked
        .into_iter()
        .filter(|(_, state, reward, _)| {
            let emb = embedder.embed(state).unwrap();
            cosine_reference(&q, &emb) < cfg.tau_novelty && *reward > tau_dynamic
        })
        .map(|(id, _, _, _)| id)
        .take(cfg.top_k)
        .collect()
}

#[test]
fn criterion_03_retrieval_oracle_equivalence() {
    let mut gate = Gate::new(3, "retrieval oracle equivalence");
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACCE03);
    for store_idx in 0..200u64 {
        let embedder = Arc::new(ScriptedEmbedder { dim: 24 });
        let repo = ExperienceRepository::ephemeral(embedder.clone());
        let size = rng.below(1_001) as usize;
        let cfg = RetrievalConfig {
            alpha: rng.next_f64(),
            top_n: 1 + rng.below(40) as usize,
            top_k: 0, // set below
            tau_novelty: 0.6 + rng.next_f64() * 0.4,
            beta_std: rng.next_f64(),
            tau_reward: -1.0,
        };
        let cfg = RetrievalConfig {
            top_k: 1 + rng.below(cfg.top_n.min(5) as u64) as usize,
            ..cfg
        };
        let batch: Vec<NewExperience> = (0..size)
            .map(|i| NewExperience {
                state_text: format!("store {store_idx} case {i} tag {}", rng.below(29)),
                action_text: format!("Question: follow-up {i}?"),
                reward: rng.next_f64() * 2.0 - 1.0,
            })
            .collect();
        repo.store_batch(&batch, &cfg).unwrap();

        let query = format!("store {store_idx} probe {}", rng.below(97));
        let got: Vec<u64> = repo
            .retrieve(&query, &cfg, &ScriptedReranker)
            .unwrap()
            .items
            .iter()
            .map(|c| c.tuple.id)
            .collect();

        let tuples: Vec<(u64, String, f64)> = repo
            .snapshot()
            .into_iter()
            .map(|t| (t.id, t.state_text, t.reward))
            .collect();
        let expected =
            reference_retrieve(&tuples, embedder.as_ref(), &ScriptedReranker, &query, &cfg);
        gate.check(got == expected, || {
            format!("store {store_idx} (size {size}): got {got:?}, reference {expected:?}")
        });
    }
    let elapsed = started.elapsed();
    gate.check(elapsed.as_secs_f64() < 60.0, || {
        format!("200 stores took {elapsed:?}, budget 60s")
    });
    gate.finish();
}

#[test]
fn criterion_04_storage_gate() {
    let mut gate = Gate::new(4, "storage gate");
    let dir = tempfile::tempdir().unwrap();
    let cfg = RetrievalConfig::default();
    let embedder = Arc::new(HashEmbedder::new(16));
    let mut rng = SplitMix64::new(0xACCE04);
    {
        let repo = ExperienceRepository::open(dir.path(), embedder.clone()).unwrap();
        for batch_idx in 0..20 {
            let mut batch: Vec<NewExperience> = (0..rng.below(50))
                .map(|i| NewExperience {
                    state_text: format!("batch {batch_idx} item {i}"),
                    action_text: "Question: anything else?".into(),
                    reward: rng.next_f64() * 2.0 - 1.0,
                })
                .collect();
            if batch_idx == 7 {
                // The boundary value itself must be stored.
                batch.push(NewExperience {
                    state_text: "exact boundary case".into(),
                    action_text: "Question: boundary?".into(),
                    reward: cfg.tau_reward,
                });
            }
            repo.store_batch(&batch, &cfg).unwrap();
        }
    }
    // Full scan through a fresh handle so the check covers the persisted
    // state, not just the in-memory index.
    let repo = ExperienceRepository::open(dir.path(), embedder).unwrap();
    let tuples = repo.snapshot();
    gate.check(!tuples.is_empty(), || "no tuples stored at all".into());
    for t in &tuples {
        gate.check(t.reward >= cfg.tau_reward, || {
            format!(
                "tuple {} has reward {} below tau {}",
                t.id, t.reward, cfg.tau_reward
            )
        });
    }
    gate.check(tuples.iter().any(|t| t.reward == cfg.tau_reward), || {
        "boundary-value tuple was not stored".into()
    });
    gate.finish();
}

#[test]
fn criterion_05_grpo_loss() {
    let mut gate = Gate::new(5, "grpo loss");
    let mut rng = SplitMix64::new(0xACCE05);
    let make_group = |chosen: f64, rejected: Vec<f64>| GrpoGroup {
        prompt_text: "p".into(),
        chosen: ("c".into(), chosen),
        rejected: rejected
            .into_iter()
            .enumerate()
            .map(|(i, r)| (format!("r{i}"), r))
            .collect(),
    };

    for i in 0..1_000 {
        let chosen = rng.next_f64() * 4.0 - 2.0;
        let rejected: Vec<f64> = (0..1 + rng.below(16))
            .map(|_| rng.next_f64() * 4.0 - 2.0)
            .collect();
        let group = make_group(chosen, rejected.clone());
        let got = grpo_loss(&group).unwrap();
        // Direct two-pass softmax arithmetic, no stabilization.
        let denom: f64 = chosen.exp() + rejected.iter().map(|r| r.exp()).sum::<f64>();
        let direct = -(chosen.exp() / denom).ln();
        gate.check((got - direct).abs() < 1e-10, || {
            format!("group {i}: got {got}, direct {direct}")
        });
    }

    for n in 1..=12usize {
        let value = rng.next_f64() * 4.0 - 2.0;
        let group = make_group(value, vec![value; n]);
        let got = grpo_loss(&group).unwrap();
        let expected = ((n + 1) as f64).ln();
        gate.check((got - expected).abs() < 1e-12, || {
            format!(
                "uniform group of {}: got {got}, expected ln({})",
                n + 1,
                n + 1
            )
        });
    }

    for i in 0..200 {
        let chosen = rng.next_f64() * 4.0 - 2.0;
        let rejected: Vec<f64> = (0..1 + rng.below(8))
            .map(|_| rng.next_f64() * 4.0 - 2.0)
            .collect();
        let shift = rng.next_f64() * 200.0 - 100.0;
        let base = grpo_loss(&make_group(chosen, rejected.clone())).unwrap();
        let shifted = grpo_loss(&make_group(
            chosen + shift,
            rejected.iter().map(|r| r + shift).collect(),
        ))
        .unwrap();
        gate.check((base - shifted).abs() < 1e-12, || {
            format!("shift case {i}: base {base}, shifted {shifted}, delta {shift}")
        });
    }
    gate.finish();
}

#[test]
fn criterion_06_dynamic_threshold() {
    let mut gate = Gate::new(6, "dynamic threshold");
    let mut rng = SplitMix64::new(0xACCE06);
    for i in 0..1_000 {
        let len = if i % 10 == 0 {
            1
        } else {
            1 + rng.below(50) as usize
        };
        let rewards: Vec<f64> = (0..len).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let beta = rng.next_f64() * 2.0;
        let got = consult_core::experience::dynamic_threshold(&rewards, beta).unwrap();
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let sigma = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        let expected = mean + beta * sigma;
        gate.check((got - expected).abs() < 1e-12, || {
            format!("list {i} (len {len}): got {got}, expected {expected}")
        });
    }
    gate.finish();
}

#[test]
fn criterion_07_win_rate_aggregation() {
    let mut gate = Gate::new(7, "win-rate aggregation");
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join("judgments_100.jsonl");
    let judgments = load_judgments(&fixture).unwrap();
    gate.check(judgments.len() == 100, || {
        format!("fixture has {} judgments, expected 100", judgments.len())
    });
    let table = aggregate_win_rates(&judgments).unwrap();

    // Hand-counted per metric: the fixture repeats the same 25 judgments
    // under each metric. (wins, losses, ties, comparisons, win_rate)
    let expected: BTreeMap<&str, (u64, u64, u64, u64, f64)> = BTreeMap::from([
        ("ares", (7, 2, 8, 17, 7.0 / 9.0)),
        ("boreas", (2, 7, 1, 10, 2.0 / 9.0)),
        ("calypso", (4, 3, 1, 8, 4.0 / 7.0)),
        ("daphne", (3, 4, 1, 8, 3.0 / 7.0)),
        ("echo", (0, 0, 7, 7, 0.0)),
    ]);
    for metric in Metric::ALL {
        let models = &table.metrics[&metric];
        gate.check(models.len() == expected.len(), || {
            format!(
                "{metric}: {} models, expected {}",
                models.len(),
                expected.len()
            )
        });
        for (name, (w, l, t, c, wr)) in &expected {
            let Some(stats) = models.get(*name) else {
                gate.check(false, || format!("{metric}: model {name} missing"));
                continue;
            };
            gate.check(
                stats.wins == *w
                    && stats.losses == *l
                    && stats.ties == *t
                    && stats.comparisons == *c,
                || {
                    format!(
                        "{metric}/{name}: got W{} L{} T{} C{}, expected W{w} L{l} T{t} C{c}",
                        stats.wins, stats.losses, stats.ties, stats.comparisons
                    )
                },
            );
            gate.check((stats.win_rate - wr).abs() < 1e-15, || {
                format!("{metric}/{name}: win rate {} expected {wr}", stats.win_rate)
            });
        }
        // Conservation: every decisive judgment hands out one win and one
        // loss.
        let wins: u64 = models.values().map(|s| s.wins).sum();
        let losses: u64 = models.values().map(|s| s.losses).sum();
        gate.check(wins == losses, || {
            format!("{metric}: total wins {wins} != total losses {losses}")
        });
        // The all-tie model reports a zero win rate rather than dividing
        // by zero.
        gate.check(models["echo"].win_rate == 0.0, || {
            format!("{metric}: echo win rate {}", models["echo"].win_rate)
        });
        let ranked = rank_models(&table, metric);
        gate.check(
            ranked == vec!["ares", "calypso", "daphne", "boreas", "echo"],
            || format!("{metric}: ranking {ranked:?}"),
        );
    }

    // Independent replay with bare counters over the same judgment list.
    let mut replay: BTreeMap<(Metric, String), (u64, u64, u64)> = BTreeMap::new();
    for j in &judgments {
        let a = replay.entry((j.metric, j.model_a.clone())).or_default();
        match j.verdict {
            Verdict::AWins => a.0 += 1,
            Verdict::BWins => a.1 += 1,
            Verdict::Tie => a.2 += 1,
        }
        let b = replay.entry((j.metric, j.model_b.clone())).or_default();
        match j.verdict {
            Verdict::AWins => b.1 += 1,
            Verdict::BWins => b.0 += 1,
            Verdict::Tie => b.2 += 1,
        }
    }
    for ((metric, name), (w, l, t)) in replay {
        let stats = &table.metrics[&metric][&name];
        gate.check(
            stats.wins == w && stats.losses == l && stats.ties == t,
            || format!("replay mismatch for {metric}/{name}"),
        );
    }
    gate.finish();
}

fn write_scenarios(path: &Path, n: usize) {
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!(
            "{{\"id\":\"case-{i:02}\",\"persona\":\"Adult patient, presenting complaint {i}.\",\"ground_truth\":\"Expert assessment {i}.\"}}\n"
        ));
    }
    std::fs::write(path, text).unwrap();
}

fn determinism_config(scenario_path: &Path, out: &Path, parallelism: usize) -> RunConfig {
    RunConfig {
        scenario_path: scenario_path.to_path_buf(),
        output_dir: out.to_path_buf(),
        seed: 0xD5EED,
        parallelism,
        rollouts_per_scenario: 2,
        // A permissive storage gate so the mock judge's mixed scores leave
        // enough stored experiences for the second batch to retrieve.
        retrieval: RetrievalConfig {
            tau_reward: -0.25,
            ..RetrievalConfig::default()
        },
        doctor: BackendSpec::Mock {
            // A fallback-driven policy that recommends whenever a known
            // patient phrase shows up, so the batch mixes terminations.
            script: vec![ScriptEntry {
                contains: Some("it comes and goes".into()),
                reply: "<think>The intermittent pattern is informative enough.</think><answer>Recommendation: keep a symptom diary and book a routine exam.</answer>".into(),
            }],
        },
        ..RunConfig::default()
    }
}

fn artifact_map(out: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for sub in ["episodes", "experiences", "groups"] {
        let dir = out.join(sub);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        paths.sort();
        for path in paths {
            let name = format!("{sub}/{}", path.file_name().unwrap().to_string_lossy());
            map.insert(name, std::fs::read(&path).unwrap());
        }
    }
    map
}

#[test]
fn criterion_08_end_to_end_determinism() {
    let mut gate = Gate::new(8, "end-to-end determinism");
    let dir = tempfile::tempdir().unwrap();
    let scenario_path = dir.path().join("scenarios.jsonl");
    write_scenarios(&scenario_path, 5);

    let out_a = dir.path().join("out_a");
    let out_b = dir.path().join("out_b");
    let out_c = dir.path().join("out_c");
    run_batch(&determinism_config(&scenario_path, &out_a, 1)).unwrap();
    run_batch(&determinism_config(&scenario_path, &out_b, 1)).unwrap();
    run_batch(&determinism_config(&scenario_path, &out_c, 4)).unwrap();

    let a = artifact_map(&out_a);
    let b = artifact_map(&out_b);
    let c = artifact_map(&out_c);
    gate.check(!a.is_empty(), || "first run produced no artifacts".into());
    gate.check(a == b, || {
        let diff: Vec<&String> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        format!("reruns differ in {diff:?}")
    });
    gate.check(a == c, || {
        let diff: Vec<&String> = a
            .iter()
            .filter(|(k, v)| c.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        format!("parallelism 1 vs 4 differ in {diff:?}")
    });

    // Second batch on top of the now-populated stores: retrieval has
    // content, and worker counts still must not matter.
    run_batch(&determinism_config(&scenario_path, &out_a, 1)).unwrap();
    run_batch(&determinism_config(&scenario_path, &out_c, 4)).unwrap();
    let a2 = artifact_map(&out_a);
    let c2 = artifact_map(&out_c);
    gate.check(a2 == c2, || {
        let diff: Vec<&String> = a2
            .iter()
            .filter(|(k, v)| c2.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        format!("second-batch artifacts differ in {diff:?}")
    });
    gate.check(
        a2.get("experiences/experience_log.jsonl") != a.get("experiences/experience_log.jsonl"),
        || "second batch did not extend the experience log".into(),
    );
    gate.finish();
}

fn random_plain_text(rng: &mut SplitMix64, max_len: usize) -> String {
    const ALPHABET: &[u8] =
        b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ,.?'!-";
    loop {
        let len = 1 + rng.below(max_len as u64) as usize;
        let s: String = (0..len)
            .map(|_| ALPHABET[rng.below(ALPHABET.len() as u64) as usize] as char)
            .collect();
        let trimmed = s.trim();
        if !trimmed.is_empty() {
            return trimmed.to_string();
        }
    }
}

#[test]
fn criterion_09_parser_round_trip() {
    let mut gate = Gate::new(9, "parser round trip");
    let mut rng = SplitMix64::new(0xACCE09);
    for i in 0..1_000 {
        let action = DoctorAction {
            reasoning: random_plain_text(&mut rng, 120),
            kind: if rng.below(2) == 0 {
                ActionKind::Inquiry
            } else {
                ActionKind::Recommendation
            },
            content: random_plain_text(&mut rng, 160),
        };
        let rendered = render_doctor_action(&action);
        match parse_doctor_response(&rendered, true) {
            Ok(parsed) => gate.check(parsed == action, || {
                format!("action {i} changed through render->parse: {rendered}")
            }),
            Err(e) => gate.check(false, || format!("action {i} failed to parse: {e}")),
        }
    }

    type ViolationCheck = fn(&FormatViolation) -> bool;
    let malformed: [(&str, ViolationCheck); 3] = [
        ("no tags at all", |e| *e == FormatViolation::MissingAnswer),
        ("<think>thinking without an answer block</think>", |e| {
            *e == FormatViolation::MissingAnswer
        }),
        ("<think>r</think><answer>Diagnosis: flu</answer>", |e| {
            *e == FormatViolation::UnknownPrefix
        }),
    ];
    for (text, matches) in malformed {
        match parse_doctor_response(text, true) {
            Ok(a) => gate.check(false, || format!("malformed input parsed as {a:?}: {text}")),
            Err(e) => gate.check(matches(&e), || {
                format!("unexpected violation {e:?} for {text}")
            }),
        }
    }
    gate.finish();
}

#[test]
fn criterion_10_adherence_filter() {
    let mut gate = Gate::new(10, "adherence filter");
    let rules = default_adherence_rules();

    let patient_break = Episode::new("qc-patient")
        .append_turn(Turn::new(
            0,
            Role::Patient,
            "As a large language model, I cannot experience symptoms.",
        ))
        .unwrap();
    let report = adherence_filter(&patient_break, &rules).unwrap();
    gate.check(!report.passed, || {
        "patient persona break was not flagged".into()
    });
    gate.check(
        report
            .violations
            .iter()
            .any(|v| v.rule_id == "persona-break/large-language-model" && v.turn_index == 0),
        || format!("unexpected violations {:?}", report.violations),
    );

    let doctor_break = Episode::new("qc-doctor")
        .append_turn(Turn::new(0, Role::Patient, "My chest hurts."))
        .unwrap()
        .append_turn(Turn::new(
            1,
            Role::Doctor,
            "As a large language model, I suggest seeing a specialist.",
        ))
        .unwrap();
    let report = adherence_filter(&doctor_break, &rules).unwrap();
    gate.check(report.passed, || {
        format!(
            "doctor turn tripped the patient-only rule set: {:?}",
            report.violations
        )
    });
    gate.finish();
}
