//! Reward traces of scripted expert episodes labeled by a frozen scorer, with
//! rank correlation against the scripted progress.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

use lamp_core::encoders::encode_scene;
use lamp_core::env::trajectory::{episode_states, read_jsonl, write_jsonl};
use lamp_core::env::{self, expert_policy, task_reward, EnvConfig, TaskKind, TaskSpec, TransitionRecord};
use lamp_core::pipeline::sha256_hex;
use lamp_core::prompts::{generate_dataset, resolve_for_class, Lexicons, Prompt, PromptStyle};
use lamp_core::scorers::{spearman, Scorer, ScorerConfig};
use lamp_core::seed::{self, stream};

pub const PROBE_COLUMNS: [&str; 5] = ["t", "r_lamp", "progress_truth", "prompt_id", "scorer"];

/// Channel name under which dumped trajectories carry the scripted progress.
pub const TRUTH_CHANNEL: &str = "progress_truth";

/// Templates drawn per probe; one is picked for each episode.
const PROBE_PROMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub task: TaskKind,
    pub scorer: ScorerConfig,
    pub prompt_style: PromptStyle,
    pub episodes: usize,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn new(task: TaskKind, scorer: ScorerConfig, prompt_style: PromptStyle, episodes: usize) -> Self {
        ProbeSpec {
            task,
            scorer,
            prompt_style,
            episodes,
            seed: 0,
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }

    fn episode_seed(&self, i: usize) -> u64 {
        seed::derive(self.seed, &[stream::PROBE, i as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub episode: usize,
    pub t: usize,
    pub r_lamp: f64,
    pub progress_truth: f64,
    pub prompt_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub spec: ProbeSpec,
    pub rows: Vec<ProbeRow>,
    /// Per-episode conditioning text.
    pub prompts: Vec<String>,
    /// Spearman correlation per episode; `None` when either trace is constant.
    pub rho: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub config_hash: String,
    pub task: TaskKind,
    pub scorer: String,
    pub prompt_style: u8,
    pub episodes: usize,
    pub rho: Vec<Option<f64>>,
    /// Mean over episodes, undefined correlations counted as zero.
    pub mean_rho: f64,
}

impl ProbeReport {
    pub fn mean_rho(&self) -> f64 {
        if self.rho.is_empty() {
            return f64::NAN;
        }
        self.rho.iter().map(|r| r.unwrap_or(0.0)).sum::<f64>() / self.rho.len() as f64
    }

    pub fn summary(&self) -> ProbeSummary {
        ProbeSummary {
            config_hash: self.spec.hash(),
            task: self.spec.task,
            scorer: self.spec.scorer.kind.name().into(),
            prompt_style: self.spec.prompt_style.number(),
            episodes: self.rho.len(),
            rho: self.rho.clone(),
            mean_rho: self.mean_rho(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# config_hash={} task={} prompt_style={} episodes={}",
            self.spec.hash(),
            self.spec.task.name(),
            self.spec.prompt_style,
            self.rho.len()
        )
        .unwrap();
        writeln!(out, "{}", PROBE_COLUMNS.join(",")).unwrap();
        let scorer = self.spec.scorer.kind.name();
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.t, r.r_lamp, r.progress_truth, r.prompt_id, scorer).unwrap();
        }
        out
    }

    pub fn save(&self, csv: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv()).with_context(|| format!("writing {}", csv.display()))
    }
}

fn task_for(kind: TaskKind, state: &lamp_core::env::SceneState) -> TaskSpec {
    TaskSpec::new(kind, state.objects[0].class)
}

/// Scripted expert episodes on the first object of each scene, with the scripted
/// progress attached under [`TRUTH_CHANNEL`].
pub fn expert_trajectories(spec: &ProbeSpec) -> Result<Vec<Vec<TransitionRecord>>> {
    let cfg = EnvConfig::default();
    (0..spec.episodes)
        .map(|i| {
            let mut s = env::reset(&cfg, spec.episode_seed(i))?;
            let task = task_for(spec.task, &s);
            let mut records = Vec::with_capacity(cfg.horizon);
            while !s.is_terminal() {
                let a = expert_policy(&cfg, &s, &task);
                let (next, _) = env::step(&cfg, &s, a)?;
                let r = task_reward(&cfg, &next, &task)?;
                records.push(TransitionRecord {
                    t: records.len(),
                    state: s,
                    action: a,
                    reward_channels: BTreeMap::from([(TRUTH_CHANNEL.to_string(), r.reward)]),
                    prompt_id: None,
                });
                s = next;
            }
            Ok(records)
        })
        .collect()
}

/// Conditioning prompt of episode `i`: a template of the probed style drawn from
/// a seeded dataset, with its noun slot filled for `class`.
fn episode_prompt(
    spec: &ProbeSpec,
    pool: &[Prompt],
    lex: &Lexicons,
    class: lamp_core::env::ObjectClass,
    i: usize,
) -> Result<Prompt> {
    let mut rng = seed::rng(spec.episode_seed(i), &[stream::PROMPT]);
    let template = &pool[rng.random_range(0..pool.len())];
    Ok(if template.style.has_slot() {
        resolve_for_class(template, class, lex, &mut rng)?
    } else {
        template.clone()
    })
}

/// Label recorded episodes. Scripted progress comes from [`TRUTH_CHANNEL`] when
/// present and is recomputed from the states otherwise.
pub fn probe_trajectories(spec: &ProbeSpec, episodes: &[Vec<TransitionRecord>]) -> Result<ProbeReport> {
    if episodes.is_empty() {
        bail!("probe needs at least one episode");
    }
    let lex = Lexicons::shipped();
    let scorer = Scorer::new(spec.scorer.clone(), &lex)?;
    let pool = generate_dataset(spec.prompt_style, &lex, spec.seed, PROBE_PROMPTS)?.prompts;
    let cfg = EnvConfig::default();
    let mut rows = Vec::new();
    let mut rho = Vec::with_capacity(episodes.len());
    let mut prompts = Vec::with_capacity(episodes.len());
    for (i, records) in episodes.iter().enumerate() {
        let states = episode_states(&cfg, records)?;
        let task = task_for(spec.task, &states[0]);
        let prompt = episode_prompt(spec, &pool, &lex, task.target_class, i)?;
        let frames: Vec<_> = states.iter().map(encode_scene).collect();
        let r = scorer.label_episode(&frames, &scorer.context(&prompt), spec.episode_seed(i))?;
        let truth: Vec<f64> = records
            .iter()
            .zip(&states[1..])
            .map(|(rec, next)| match rec.reward_channels.get(TRUTH_CHANNEL) {
                Some(&v) => Ok(v),
                None => Ok(task_reward(&cfg, next, &task)?.reward),
            })
            .collect::<Result<_>>()?;
        rho.push(spearman(&r, &truth));
        for (t, (&r_lamp, &progress_truth)) in r.iter().zip(&truth).enumerate() {
            rows.push(ProbeRow {
                episode: i,
                t,
                r_lamp,
                progress_truth,
                prompt_id: prompt.prompt_id,
            });
        }
        prompts.push(prompt.text);
    }
    Ok(ProbeReport {
        spec: spec.clone(),
        rows,
        prompts,
        rho,
    })
}

/// Run scripted experts and label their episodes.
pub fn probe_rewards(spec: &ProbeSpec) -> Result<ProbeReport> {
    probe_trajectories(spec, &expert_trajectories(spec)?)
}

/// Write episodes back to back as one JSON-lines file.
pub fn dump_trajectories(path: &Path, episodes: &[Vec<TransitionRecord>]) -> Result<()> {
    let flat: Vec<TransitionRecord> = episodes.iter().flatten().cloned().collect();
    write_jsonl(path, &flat).with_context(|| format!("writing {}", path.display()))
}

/// Split a JSON-lines dump into episodes at every `t = 0`.
pub fn load_trajectories(path: &Path) -> Result<Vec<Vec<TransitionRecord>>> {
    let records = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    let mut episodes: Vec<Vec<TransitionRecord>> = Vec::new();
    for r in records {
        if r.t == 0 || episodes.is_empty() {
            episodes.push(Vec::new());
        }
        episodes.last_mut().expect("pushed above").push(r);
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lamp_core::scorers::ScorerKind;

    fn spec(style: u8, sigma: f64, n: usize) -> ProbeSpec {
        let scorer = ScorerConfig {
            kind: ScorerKind::R3MStyle,
            noise_std: sigma,
            ..ScorerConfig::default()
        };
        ProbeSpec::new(TaskKind::PickUp, scorer, PromptStyle::from_number(style).unwrap(), n)
    }

    #[test]
    fn row_count_is_horizon_times_episodes() {
        let r = probe_rewards(&spec(1, 0.05, 3)).unwrap();
        assert_eq!(r.rows.len(), 3 * EnvConfig::default().horizon);
        assert_eq!(r.rho.len(), 3);
    }

    #[test]
    fn noiseless_matching_prompt_is_monotone_in_progress() {
        let r = probe_rewards(&spec(1, 0.0, 5)).unwrap();
        for (i, rho) in r.rho.iter().enumerate() {
            let rho = rho.expect("non-constant traces");
            assert!((rho - 1.0).abs() < 1e-12, "episode {i}: rho {rho}");
        }
    }

    #[test]
    fn distractor_prompts_carry_no_rank_signal() {
        let r = probe_rewards(&spec(6, 0.05, 20)).unwrap();
        assert!(r.mean_rho().abs() <= 0.15, "mean rho {}", r.mean_rho());
    }

    #[test]
    fn dumped_trajectories_reproduce_the_probe() {
        let s = spec(2, 0.05, 2);
        let eps = expert_trajectories(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        dump_trajectories(&path, &eps).unwrap();
        let back = load_trajectories(&path).unwrap();
        assert_eq!(back, eps);
        assert_eq!(probe_trajectories(&s, &back).unwrap(), probe_rewards(&s).unwrap());
    }

    #[test]
    fn csv_has_the_probe_schema() {
        let r = probe_rewards(&spec(1, 0.05, 1)).unwrap();
        let t = lamp_core::pipeline::MetricsTable::parse(&r.to_csv()).unwrap();
        assert_eq!(t.columns, PROBE_COLUMNS);
        assert_eq!(t.comment_field("config_hash"), Some(r.spec.hash().as_str()));
    }
}
