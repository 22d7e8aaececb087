//! `consult` is the command-line front end for the consultation harness.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use consult_cli::config::RunConfig;
use consult_cli::orchestrator::run_batch;
use consult_core::dialogue::episodes_from_jsonl;
use consult_core::eval::{
    adherence_filter, aggregate_win_rates, default_adherence_rules, load_judgments,
    render_leaderboard, AdherenceRule, RulePattern,
};
use consult_core::experience::{CosineReranker, ExperienceRepository, HashEmbedder};
use consult_core::grpo::{grpo_loss, load_training_records};
use consult_core::reward::{process_reward, DimensionScores};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "consult",
    about = "Closed-loop consultation rollouts with judged rewards, experience retrieval, and group-relative training exports",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of rollouts from a config file.
    Rollout {
        /// Path to the TOML run config.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the config's scenario file.
        #[arg(long)]
        scenario_path: Option<PathBuf>,
        /// Override the config's worker count.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Override the config's rollouts per scenario.
        #[arg(long)]
        rollouts_per_scenario: Option<usize>,
    },
    /// Inspect or compact the experience store.
    Store {
        #[command(subcommand)]
        action: StoreAction,
    },
    /// Run the retrieval pipeline against a store for one query.
    Retrieve {
        #[arg(long)]
        config: PathBuf,
        /// Query state text.
        #[arg(long)]
        query: String,
        /// Override the config's output directory (the store lives in its
        /// `experiences/` subdirectory).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Reward-engine utilities.
    Reward {
        #[command(subcommand)]
        action: RewardAction,
    },
    /// Recompute group losses from an exported record file.
    GrpoLoss {
        /// Path to a groups JSONL file.
        #[arg(long)]
        records: PathBuf,
    },
    /// Aggregate pairwise judgments into win-rate leaderboards.
    Winrate {
        /// Judgment file (.jsonl or .csv).
        #[arg(long)]
        judgments: PathBuf,
        /// Optional path for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Screen episode files for patient persona breaks.
    Qc {
        /// Episode JSONL file or a directory of them.
        #[arg(long)]
        episodes: PathBuf,
        /// Extra literal phrases to scan for, in addition to the defaults.
        #[arg(long = "phrase")]
        phrases: Vec<String>,
        /// Also ask the judge backend from this config for an adherence
        /// score per episode.
        #[arg(long)]
        llm: bool,
        /// Run config supplying the judge backend for --llm.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Minimum passing adherence score for --llm.
        #[arg(long, default_value_t = 0.5)]
        llm_threshold: f64,
    },
}

#[derive(Subcommand)]
enum StoreAction {
    /// Print store statistics and the first few tuples.
    Inspect {
        /// Store directory (the `experiences/` output of a rollout).
        #[arg(long)]
        dir: PathBuf,
        /// Embedding dimension the store was built with.
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Rewrite the store files to a clean, reconciled state.
    Compact {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
}

#[derive(Subcommand)]
enum RewardAction {
    /// Score a JSONL file of eight-dimension score vectors, one reward per line.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Optional run config supplying non-default reward constants.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    // Die quietly when a pipe closes early (`consult ... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Rollout {
            config,
            seed,
            output_dir,
            scenario_path,
            parallelism,
            rollouts_per_scenario,
        } => {
            let config = RunConfig::load_with(&config, |c| {
                if let Some(seed) = seed {
                    c.seed = seed;
                }
                if let Some(out) = output_dir {
                    c.output_dir = out;
                }
                if let Some(path) = scenario_path {
                    c.scenario_path = path;
                }
                if let Some(parallelism) = parallelism {
                    c.parallelism = parallelism;
                }
                if let Some(rollouts) = rollouts_per_scenario {
                    c.rollouts_per_scenario = rollouts;
                }
            })?;
            let summary = run_batch(&config)?;
            println!("{summary}");
            Ok(())
        }
        Command::Store { action } => match action {
            StoreAction::Inspect { dir, dim } => store_inspect(&dir, dim),
            StoreAction::Compact { dir, dim } => {
                let repo = open_store(&dir, dim)?;
                let kept = repo.compact()?;
                println!("compacted {} tuples in {}", kept, dir.display());
                Ok(())
            }
        },
        Command::Retrieve {
            config,
            query,
            output_dir,
        } => retrieve(&config, &query, output_dir),
        Command::Reward { action } => match action {
            RewardAction::Eval { scores, config } => reward_eval(&scores, config.as_deref()),
        },
        Command::GrpoLoss { records } => {
            let records = load_training_records(&records)?;
            for record in &records {
                let loss = grpo_loss(&record.to_group())?;
                println!("{loss}");
            }
            Ok(())
        }
        Command::Winrate { judgments, out } => winrate(&judgments, out.as_deref()),
        Command::Qc {
            episodes,
            phrases,
            llm,
            config,
            llm_threshold,
        } => {
            let judge = if llm {
                let config_path = config.ok_or_else(|| {
                    anyhow::anyhow!("--llm requires --config for the judge backend")
                })?;
                let run = RunConfig::load_unchecked(&config_path)?;
                Some(run.make_backend(consult_cli::config::AgentRole::Judge, run.seed))
            } else {
                None
            };
            qc(&episodes, &phrases, judge.as_deref(), llm_threshold)
        }
    }
}

fn open_store(dir: &Path, dim: usize) -> Result<ExperienceRepository> {
    ExperienceRepository::open(dir, Arc::new(HashEmbedder::new(dim)))
        .with_context(|| format!("opening store {}", dir.display()))
}

fn store_inspect(dir: &Path, dim: usize) -> Result<()> {
    let repo = open_store(dir, dim)?;
    let tuples = repo.snapshot();
    println!("store:      {}", dir.display());
    println!("dimension:  {}", repo.dim());
    println!("tuples:     {}", tuples.len());
    if let Some(count) = repo.persisted_count() {
        println!("persisted:  {count}");
    }
    if !tuples.is_empty() {
        let min = tuples
            .iter()
            .map(|t| t.reward)
            .fold(f64::INFINITY, f64::min);
        let max = tuples
            .iter()
            .map(|t| t.reward)
            .fold(f64::NEG_INFINITY, f64::max);
        let mean = tuples.iter().map(|t| t.reward).sum::<f64>() / tuples.len() as f64;
        println!("reward:     min {min:.4} / mean {mean:.4} / max {max:.4}");
        println!("head:");
        for t in tuples.iter().take(3) {
            let state = t.state_text.replace('\n', " | ");
            let shown: String = state.chars().take(80).collect();
            println!("  #{} r={:.3} {}", t.id, t.reward, shown);
        }
    }
    Ok(())
}

fn retrieve(config_path: &Path, query: &str, output_dir: Option<PathBuf>) -> Result<()> {
    let mut config = RunConfig::load_unchecked(config_path)?;
    if let Some(out) = output_dir {
        config.output_dir = out;
    }
    let embedder = Arc::new(HashEmbedder::new(config.embed_dim));
    let dir = config.output_dir.join("experiences");
    let repo = ExperienceRepository::open(&dir, embedder.clone())
        .with_context(|| format!("opening store {}", dir.display()))?;
    let reranker = CosineReranker::new(embedder);
    let retrieval = repo.retrieve(query, &config.retrieval, &reranker)?;
    if retrieval.items.is_empty() {
        println!("no experiences retrieved");
        return Ok(());
    }
    for (i, item) in retrieval.items.iter().enumerate() {
        println!(
            "{}. #{} reward {:.4} combined {:.4} rerank {:.4} similarity {:.4}",
            i + 1,
            item.tuple.id,
            item.tuple.reward,
            item.combined_score,
            item.rerank_score.unwrap_or(f64::NAN),
            item.query_similarity.unwrap_or(f64::NAN),
        );
        println!("   state:  {}", item.tuple.state_text.replace('\n', " | "));
        println!("   action: {}", item.tuple.action_text);
    }
    Ok(())
}

fn reward_eval(scores_path: &Path, config_path: Option<&Path>) -> Result<()> {
    let reward_config = match config_path {
        Some(p) => RunConfig::load_unchecked(p)?.reward,
        None => Default::default(),
    };
    let text = std::fs::read_to_string(scores_path)
        .with_context(|| format!("reading {}", scores_path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scores: DimensionScores = serde_json::from_str(line)
            .with_context(|| format!("score vector on line {}", lineno + 1))?;
        let reward = process_reward(&scores, &reward_config)?;
        println!("{reward}");
    }
    Ok(())
}

fn winrate(judgments_path: &Path, out: Option<&Path>) -> Result<()> {
    let judgments = load_judgments(judgments_path)?;
    let table = aggregate_win_rates(&judgments)?;
    print!("{}", render_leaderboard(&table));
    if let Some(out) = out {
        std::fs::write(out, format!("{}\n", serde_json::to_string_pretty(&table)?))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn qc(
    episodes_path: &Path,
    extra_phrases: &[String],
    judge: Option<&dyn consult_core::client::ChatBackend>,
    llm_threshold: f64,
) -> Result<()> {
    let mut rules = default_adherence_rules();
    for (i, phrase) in extra_phrases.iter().enumerate() {
        rules.push(AdherenceRule {
            id: format!("extra/{i}"),
            pattern: RulePattern::Literal(phrase.clone()),
        });
    }
    let mut files = Vec::new();
    if episodes_path.is_dir() {
        for entry in std::fs::read_dir(episodes_path)? {
            let path = entry?.path();
            if path.extension().map(|e| e == "jsonl").unwrap_or(false) {
                files.push(path);
            }
        }
        files.sort();
    } else {
        files.push(episodes_path.to_path_buf());
    }
    if files.is_empty() {
        bail!("no episode files under {}", episodes_path.display());
    }
    let mut failed = 0usize;
    let mut total = 0usize;
    for file in files {
        let text = std::fs::read_to_string(&file)?;
        let label = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.display().to_string());
        for episode in episodes_from_jsonl(&text)? {
            total += 1;
            let report = adherence_filter(&episode, &rules)?;
            let mut passed = report.passed;
            let mut llm_note = String::new();
            if let Some(judge) = judge {
                let (score, ok) =
                    consult_core::eval::llm_adherence_check(judge, &episode, llm_threshold)?;
                llm_note = format!(" llm_adherence {score:.2}");
                passed &= ok;
            }
            if passed {
                println!("PASS {} [{}]{}", report.episode_id, label, llm_note);
            } else {
                failed += 1;
                println!("FAIL {} [{}]{}", report.episode_id, label, llm_note);
                for v in &report.violations {
                    println!(
                        "     turn {} rule {} matched {:?}",
                        v.turn_index, v.rule_id, v.matched_text
                    );
                }
            }
        }
    }
    println!("{}/{} episodes passed", total - failed, total);
    if failed > 0 {
        std::process::exit(2);
    }
    Ok(())
}
