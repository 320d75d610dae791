use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{init_models, Checkpoint};
use super::config::{sha256_hex, CriticFinetune, Precision, RunConfig, RunMode};
use super::eval::{eval_episodes, evaluate_policy, pretrain_probe, EvalResult};
use super::metrics::{MetricsRow, RunMetrics, TaskRewardAccess};
use crate::agent::{act, ActMode, Agent, Batch, ReplayBuffer, Transition};
use crate::encoders::{embed_language_salted, encode_scene, LangEmbedding, VisFeature};
use crate::env::{self, task_reward, Action, ObjectClass, SceneState};
use crate::error::{Error, Result};
use crate::explore::Explorer;
use crate::math::{Scalar, Tensor};
use crate::prompts::{generate_dataset, substitute_noun, Lexicons, PromptDataset};
use crate::scorers::{mix_rewards, MixConfig, Scorer};
use crate::seed::{self, stream};

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: RunMetrics,
    pub dataset: PromptDataset,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub checkpoint: Checkpoint,
    pub metrics: RunMetrics,
    /// Conditioning text used throughout the run.
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RewardSource {
    /// Normalized mix of novelty and LAMP rewards.
    Mixed,
    /// Scripted task reward.
    Task,
}

/// Parameters, replay and the random streams gradient updates consume.
struct Learner<T: Scalar> {
    agent: Agent<T>,
    explorer: Explorer<T>,
    buffer: ReplayBuffer,
    mix: MixConfig,
    batch_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    train_explorer: bool,
    actor_delay: u64,
    updates: u64,
}

impl<T: Scalar> Learner<T> {
    fn ready(&self, cfg: &RunConfig, step: u64) -> bool {
        step >= cfg.warmup && step % cfg.update_every == 0 && self.buffer.len() >= cfg.agent.batch_size
    }

    fn update(&mut self, source: RewardSource, n: usize) -> Result<()> {
        let ts = self.buffer.sample(n, &mut self.batch_rng)?;
        let batch: Batch<T> = Batch::from_transitions(&ts)?;
        let rewards: Vec<f64> = match source {
            RewardSource::Mixed => {
                let bonus: Vec<f64> = self
                    .explorer
                    .bonus_batch(&batch.obs, &batch.act)?
                    .into_iter()
                    .map(|b| b.to_f64_lossy())
                    .collect();
                mix_rewards(&bonus, &batch.r_lamp, &mut self.mix)?
            }
            RewardSource::Task => batch.r_task.clone(),
        };
        let rewards: Vec<T> = rewards.into_iter().map(T::lit).collect();
        let c = self.agent.critic_update(&batch, &rewards, &mut self.update_rng)?;
        let a = if self.updates >= self.actor_delay {
            self.agent.actor_update(&batch, &mut self.update_rng)?
        } else {
            T::zero()
        };
        self.updates += 1;
        if self.train_explorer {
            let e = self.explorer.update(&batch.obs, &batch.act, &batch.next_obs)?;
            if !e.is_finite() {
                return Err(Error::Training(format!("explorer loss {e}")));
            }
        }
        if !(c.is_finite() && a.is_finite()) {
            return Err(Error::Training(format!("critic loss {c}, actor loss {a}")));
        }
        Ok(())
    }

    /// Mean novelty bonus of an episode's transitions under the current explorer.
    fn episode_bonus(&self, frames: &[VisFeature], actions: &[Action]) -> Result<f64> {
        let n = actions.len();
        let obs = Tensor::from_rows(&frames[..n].iter().map(|f| f.0.map(T::lit)).collect::<Vec<_>>())?;
        let act = Tensor::from_rows(&actions.iter().map(|a| a.0.map(T::lit)).collect::<Vec<_>>())?;
        let b = self.explorer.bonus_batch(&obs, &act)?;
        Ok(b.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n as f64)
    }
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    Action(std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
}

/// Running sums for the collected-reward columns between two metric rows.
#[derive(Default)]
struct Accum {
    lamp: f64,
    explore: f64,
    steps: usize,
}

impl Accum {
    fn add(&mut self, lamp: f64, explore_mean: f64, steps: usize) {
        self.lamp += lamp;
        self.explore += explore_mean * steps as f64;
        self.steps += steps;
    }

    fn take(&mut self) -> (f64, f64) {
        let n = self.steps as f64;
        let out = if self.steps == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (self.lamp / n, self.explore / n)
        };
        *self = Accum::default();
        out
    }
}

/// A metric row whose evaluation ran at `step` and whose collected-reward
/// columns are filled when the current episode has been labeled.
struct PendingRow {
    step: u64,
    episode: u64,
    eval: EvalResult,
    wall_ms: u64,
}

fn wrap(step: u64, e: Error) -> Error {
    match e {
        Error::Training(m) => Error::Training(format!("aborted at step {step}: {m}")),
        Error::NonFinite { context, layer } => {
            Error::Training(format!("aborted at step {step}: non-finite value in {context} layer {layer}"))
        }
        other => other,
    }
}

/// Canonical instruction for a class: the style-1 template with its class name.
pub fn default_instruction(lex: &Lexicons, class: ObjectClass) -> String {
    crate::prompts::STYLE1_TEMPLATE.replacen(crate::prompts::NOUN_SLOT, lex.nouns.entry(class).canonical(), 1)
}

/// Unsupervised pretraining with mixed novelty and LAMP rewards.
pub fn pretrain<T: Scalar>(cfg: &RunConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    if cfg.mode != RunMode::Pretrain {
        return Err(Error::Config("pretrain needs mode = pretrain".into()));
    }
    let lex = Lexicons::shipped();
    let dataset = generate_dataset(cfg.prompt_style, &lex, cfg.seed, cfg.prompt_count)?;
    let dataset_hash = sha256_hex(dataset.to_tsv().as_bytes());
    let scorer = Scorer::new(cfg.scorer.clone(), &lex)?;
    let salt = cfg.scorer.hash_salt;
    let env_cfg = cfg.pretrain_env();
    let (agent, explorer) = init_models::<T>(cfg)?;
    let mut learner = Learner {
        agent,
        explorer,
        buffer: ReplayBuffer::new(cfg.agent.buffer_capacity)?,
        mix: cfg.mix(),
        batch_rng: seed::rng(cfg.seed, &[stream::BATCH]),
        update_rng: seed::rng(cfg.seed, &[stream::UPDATE]),
        train_explorer: true,
        actor_delay: cfg.actor_delay,
        updates: 0,
    };
    let mut prompt_rng = seed::rng(cfg.seed, &[stream::PROMPT, 0]);
    let mut policy_rng = seed::rng(cfg.seed, &[stream::POLICY]);
    let mut access = TaskRewardAccess::default();
    let start = Instant::now();
    let wall = |s: &Instant| if cfg.deterministic { 0 } else { s.elapsed().as_millis() as u64 };

    let config_hash = cfg.hash();
    let mut rows = Vec::new();
    let make_row = |p: PendingRow, lamp: f64, explore: f64| MetricsRow {
        step: p.step,
        episode: p.episode,
        task: "pick_up".into(),
        prompt_style: cfg.prompt_style.number(),
        scorer: cfg.scorer.kind.name().into(),
        r_task_mean: p.eval.mean_return,
        r_lamp_mean: Some(lamp),
        r_explore_mean: explore,
        success_rate: p.eval.success_rate,
        wall_ms: p.wall_ms,
    };
    let probe = |agent: &Agent<T>, access: &mut TaskRewardAccess| {
        pretrain_probe(&agent.policy, &env_cfg, &lex, salt, cfg.probe_episodes, access)
    };
    let first = PendingRow {
        step: 0,
        episode: 0,
        eval: probe(&learner.agent, &mut access)?,
        wall_ms: wall(&start),
    };
    rows.push(make_row(first, f64::NAN, f64::NAN));

    let mut acc = Accum::default();
    let mut pending: Vec<PendingRow> = Vec::new();
    let (mut step, mut episode) = (0u64, 0u64);
    while step < cfg.steps {
        let ep_seed = seed::derive(cfg.seed, &[stream::EPISODE, episode]);
        let mut state: SceneState = env::reset(&env_cfg, ep_seed)?;
        // One prompt per episode.
        let template = &dataset.prompts[prompt_rng.random_range(0..dataset.prompts.len())];
        let prompt = if template.style.has_slot() {
            substitute_noun(template, &state, &lex, &mut prompt_rng)?
        } else {
            template.clone()
        };
        let ctx = scorer.context(&prompt);
        let lang = embed_language_salted(&prompt.text, salt);
        let mut frames = vec![encode_scene(&state)];
        let mut actions = Vec::with_capacity(env_cfg.horizon);
        while !state.is_terminal() && step < cfg.steps {
            let a = if step < cfg.warmup {
                random_action(&mut policy_rng)
            } else {
                act(&learner.agent.policy, frames.last().expect("non-empty"), &lang, ActMode::Stochastic, &mut policy_rng)?
            };
            let (next, _) = env::step(&env_cfg, &state, a)?;
            frames.push(encode_scene(&next));
            actions.push(a);
            state = next;
            step += 1;
            if learner.ready(cfg, step) {
                learner.update(RewardSource::Mixed, cfg.agent.batch_size).map_err(|e| wrap(step, e))?;
            }
            if step % cfg.eval_every == 0 || step == cfg.steps {
                pending.push(PendingRow {
                    step,
                    episode,
                    eval: probe(&learner.agent, &mut access)?,
                    wall_ms: wall(&start),
                });
            }
        }
        let r_lamp = scorer.label_episode(&frames, &ctx, ep_seed)?;
        let bonus = learner.episode_bonus(&frames, &actions)?;
        acc.add(r_lamp.iter().sum(), bonus, actions.len());
        for (t, a) in actions.iter().enumerate() {
            learner.buffer.push(Transition {
                feature: frames[t].clone(),
                action: *a,
                next_feature: frames[t + 1].clone(),
                lang: lang.clone(),
                r_lamp: r_lamp[t],
                // Pretraining never sees the task reward.
                r_task: f64::NAN,
                done: false,
            });
        }
        if !pending.is_empty() {
            let (lamp, explore) = acc.take();
            for p in pending.drain(..) {
                rows.push(make_row(p, lamp, explore));
            }
        }
        episode += 1;
    }

    let metrics = RunMetrics {
        mode: RunMode::Pretrain,
        config_hash: config_hash.clone(),
        alpha: cfg.alpha,
        seed: cfg.seed,
        rows,
        task_reward_access: access,
    };
    let checkpoint = Checkpoint::capture(
        &learner.agent,
        &learner.explorer,
        learner.mix,
        step,
        config_hash,
        Some(dataset_hash),
    );
    Ok(PretrainOutput {
        checkpoint,
        metrics,
        dataset,
    })
}

/// Task learning from `checkpoint` with the conditioning prompt fixed for the whole run.
pub fn finetune<T: Scalar>(checkpoint: &Checkpoint, cfg: &RunConfig) -> Result<FinetuneOutput> {
    cfg.validate()?;
    if cfg.mode != RunMode::Finetune {
        return Err(Error::Config("finetune needs mode = finetune".into()));
    }
    let lex = Lexicons::shipped();
    let mut agent: Agent<T> = checkpoint.restore_agent(cfg)?;
    let explorer: Explorer<T> = checkpoint.restore_explorer(cfg)?;
    let mut head_rng = seed::rng(cfg.seed, &[stream::INIT, 2]);
    match cfg.critic_finetune {
        CriticFinetune::LinearProbe => agent.critics.linear_probe(&mut head_rng),
        CriticFinetune::ResetHead => agent.critics.reset_heads(&mut head_rng),
        CriticFinetune::Full => {}
    }
    agent.reset_optimizers();
    let env_cfg = cfg.task_env();
    let task = cfg.task;
    let prompt = cfg
        .prompt
        .clone()
        .unwrap_or_else(|| default_instruction(&lex, task.target_class));
    let lang: LangEmbedding = embed_language_salted(&prompt, cfg.scorer.hash_salt);
    let evals = eval_episodes(cfg.seed, task, cfg.eval_episodes);
    let mut learner = Learner {
        agent,
        explorer,
        buffer: ReplayBuffer::new(cfg.agent.buffer_capacity)?,
        mix: checkpoint.meta.mix,
        batch_rng: seed::rng(cfg.seed, &[stream::BATCH]),
        update_rng: seed::rng(cfg.seed, &[stream::UPDATE]),
        train_explorer: cfg.finetune_explorer,
        actor_delay: cfg.actor_delay,
        updates: 0,
    };
    let mut policy_rng = seed::rng(cfg.seed, &[stream::POLICY]);
    let mut access = TaskRewardAccess::default();
    let start = Instant::now();
    let wall = |s: &Instant| if cfg.deterministic { 0 } else { s.elapsed().as_millis() as u64 };

    let make_row = |p: PendingRow, explore: f64| MetricsRow {
        step: p.step,
        episode: p.episode,
        task: task.kind.name().into(),
        prompt_style: cfg.prompt_style.number(),
        scorer: cfg.scorer.kind.name().into(),
        r_task_mean: p.eval.mean_return,
        r_lamp_mean: None,
        r_explore_mean: explore,
        success_rate: p.eval.success_rate,
        wall_ms: p.wall_ms,
    };
    let mut rows = vec![make_row(
        PendingRow {
            step: 0,
            episode: 0,
            eval: evaluate_policy(&learner.agent.policy, lang.clone(), &env_cfg, &evals, &mut access)?,
            wall_ms: wall(&start),
        },
        f64::NAN,
    )];

    let mut acc = Accum::default();
    let mut pending: Vec<PendingRow> = Vec::new();
    let (mut step, mut episode) = (0u64, 0u64);
    while step < cfg.steps {
        let ep_seed = seed::derive(cfg.seed, &[stream::EPISODE, episode]);
        let mut state = env::reset(&env_cfg, ep_seed)?;
        let mut frames = vec![encode_scene(&state)];
        let mut actions = Vec::with_capacity(env_cfg.horizon);
        while !state.is_terminal() && step < cfg.steps {
            let a = if step < cfg.warmup {
                random_action(&mut policy_rng)
            } else {
                act(&learner.agent.policy, frames.last().expect("non-empty"), &lang, ActMode::Stochastic, &mut policy_rng)?
            };
            let (next, _) = env::step(&env_cfg, &state, a)?;
            let r = task_reward(&env_cfg, &next, &task)?;
            access.learning += 1;
            let f = encode_scene(&next);
            learner.buffer.push(Transition {
                feature: frames.last().expect("non-empty").clone(),
                action: a,
                next_feature: f.clone(),
                lang: lang.clone(),
                r_lamp: f64::NAN,
                r_task: r.reward,
                done: false,
            });
            frames.push(f);
            actions.push(a);
            state = next;
            step += 1;
            if learner.ready(cfg, step) {
                learner.update(RewardSource::Task, cfg.agent.batch_size).map_err(|e| wrap(step, e))?;
            }
            if step % cfg.eval_every == 0 || step == cfg.steps {
                pending.push(PendingRow {
                    step,
                    episode,
                    eval: evaluate_policy(&learner.agent.policy, lang.clone(), &env_cfg, &evals, &mut access)?,
                    wall_ms: wall(&start),
                });
            }
        }
        let bonus = learner.episode_bonus(&frames, &actions)?;
        acc.add(0.0, bonus, actions.len());
        if !pending.is_empty() {
            let (_, explore) = acc.take();
            for p in pending.drain(..) {
                rows.push(make_row(p, explore));
            }
        }
        episode += 1;
    }

    let config_hash = cfg.hash();
    let metrics = RunMetrics {
        mode: RunMode::Finetune,
        config_hash: config_hash.clone(),
        alpha: cfg.alpha,
        seed: cfg.seed,
        rows,
        task_reward_access: access,
    };
    let checkpoint = Checkpoint::capture(
        &learner.agent,
        &learner.explorer,
        learner.mix,
        step,
        config_hash,
        checkpoint.meta.prompt_dataset_hash.clone(),
    );
    Ok(FinetuneOutput {
        checkpoint,
        metrics,
        prompt,
    })
}

/// [`pretrain`] at the configured precision.
pub fn run_pretrain(cfg: &RunConfig) -> Result<PretrainOutput> {
    match cfg.precision {
        Precision::F32 => pretrain::<f32>(cfg),
        Precision::F64 => pretrain::<f64>(cfg),
    }
}

/// [`finetune`] at the configured precision.
pub fn run_finetune(checkpoint: &Checkpoint, cfg: &RunConfig) -> Result<FinetuneOutput> {
    match cfg.precision {
        Precision::F32 => finetune::<f32>(checkpoint, cfg),
        Precision::F64 => finetune::<f64>(checkpoint, cfg),
    }
}

/// The from-scratch baseline: a fresh initialisation finetuned with nothing frozen.
pub fn run_scratch(cfg: &RunConfig) -> Result<FinetuneOutput> {
    let fresh = match cfg.precision {
        Precision::F32 => Checkpoint::fresh::<f32>(cfg)?,
        Precision::F64 => Checkpoint::fresh::<f64>(cfg)?,
    };
    let cfg = RunConfig {
        critic_finetune: CriticFinetune::Full,
        ..cfg.clone()
    };
    run_finetune(&fresh, &cfg)
}
