use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::metrics::TaskRewardAccess;
use crate::agent::Policy;
use crate::encoders::{encode_scene, embed_language_salted, LangEmbedding, VisFeature};
use crate::env::{self, expert_policy, task_reward, Action, EnvConfig, SceneState, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::math::{Scalar, Tensor};
use crate::prompts::{resolve_for_class, Lexicons, Prompt, PromptStyle, STYLE1_TEMPLATE};
use crate::seed;

/// Fixed base for the held-out pretraining probe, shared by every run.
pub const PROBE_BASE_SEED: u64 = 0x9e0b_e5ee_d000_0001;

/// Chooses actions for a batch of episodes advanced in lockstep.
pub trait Controller {
    fn act_batch(&mut self, states: &[SceneState], features: &[VisFeature]) -> Result<Vec<Action>>;
}

/// Deterministic policy conditioned on one embedding per episode, or one shared embedding.
pub struct PolicyController<'a, T: Scalar> {
    pub policy: &'a Policy<T>,
    pub langs: Vec<LangEmbedding>,
}

impl<T: Scalar> Controller for PolicyController<'_, T> {
    fn act_batch(&mut self, _states: &[SceneState], features: &[VisFeature]) -> Result<Vec<Action>> {
        let n = features.len();
        if self.langs.len() != 1 && self.langs.len() != n {
            return Err(Error::Dimension {
                context: "policy controller embeddings",
                expected: n,
                got: self.langs.len(),
            });
        }
        let obs = Tensor::from_rows(&features.iter().map(|f| f.0.map(T::lit)).collect::<Vec<_>>())?;
        let lang = Tensor::from_rows(
            &(0..n)
                .map(|i| self.langs[i.min(self.langs.len() - 1)].0.map(T::lit))
                .collect::<Vec<_>>(),
        )?;
        let a = self.policy.mode_batch(&obs, &lang)?;
        Ok((0..n)
            .map(|r| Action(std::array::from_fn(|i| a.row_slice(r)[i].to_f64_lossy())))
            .collect())
    }
}

/// Scripted expert for one task.
pub struct ExpertController {
    pub env: EnvConfig,
    pub task: TaskSpec,
}

impl Controller for ExpertController {
    fn act_batch(&mut self, states: &[SceneState], _features: &[VisFeature]) -> Result<Vec<Action>> {
        Ok(states.iter().map(|s| expert_policy(&self.env, s, &self.task)).collect())
    }
}

/// Uniform actions in `[-1, 1]^4`.
pub struct RandomController {
    pub rng: ChaCha8Rng,
}

impl Controller for RandomController {
    fn act_batch(&mut self, states: &[SceneState], _features: &[VisFeature]) -> Result<Vec<Action>> {
        Ok(states
            .iter()
            .map(|_| Action(std::array::from_fn(|_| self.rng.random_range(-1.0..=1.0))))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean over episodes of the per-step mean task reward.
    pub mean_return: f64,
    /// Fraction of episodes that satisfied the success predicate at any step.
    pub success_rate: f64,
    pub returns: Vec<f64>,
}

/// Roll out `(episode_seed, task)` pairs in lockstep under `ctrl`.
pub fn evaluate(
    ctrl: &mut dyn Controller,
    env_cfg: &EnvConfig,
    episodes: &[(u64, TaskSpec)],
    access: &mut TaskRewardAccess,
) -> Result<EvalResult> {
    if episodes.is_empty() {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut states: Vec<SceneState> = episodes
        .iter()
        .map(|(s, _)| env::reset(env_cfg, *s))
        .collect::<Result<_>>()?;
    let n = states.len();
    let mut sums = vec![0.0; n];
    let mut success = vec![false; n];
    let mut steps = 0usize;
    while !states[0].is_terminal() {
        let features: Vec<VisFeature> = states.iter().map(encode_scene).collect();
        let actions = ctrl.act_batch(&states, &features)?;
        for (i, a) in actions.into_iter().enumerate() {
            let (next, _) = env::step(env_cfg, &states[i], a)?;
            let r = task_reward(env_cfg, &next, &episodes[i].1)?;
            access.logging += 1;
            sums[i] += r.reward;
            success[i] |= r.success;
            states[i] = next;
        }
        steps += 1;
    }
    let returns: Vec<f64> = sums.iter().map(|s| s / steps as f64).collect();
    Ok(EvalResult {
        mean_return: returns.iter().sum::<f64>() / n as f64,
        success_rate: success.iter().filter(|&&s| s).count() as f64 / n as f64,
        returns,
    })
}

/// Evaluation seeds of a run: `n` fresh episodes derived from the run seed.
pub fn eval_episodes(run_seed: u64, task: TaskSpec, n: usize) -> Vec<(u64, TaskSpec)> {
    (0..n as u64)
        .map(|i| (seed::derive(run_seed, &[seed::stream::EVAL, i]), task))
        .collect()
}

/// Deterministic policy conditioned on `lang`, evaluated on `task`.
pub fn evaluate_policy<T: Scalar>(
    policy: &Policy<T>,
    lang: LangEmbedding,
    env_cfg: &EnvConfig,
    episodes: &[(u64, TaskSpec)],
    access: &mut TaskRewardAccess,
) -> Result<EvalResult> {
    let mut ctrl = PolicyController {
        policy,
        langs: vec![lang],
    };
    evaluate(&mut ctrl, env_cfg, episodes, access)
}

/// Held-out pick-up probe used while pretraining. Each episode targets one
/// object of its scene and is conditioned on the canonical instruction for it.
pub fn pretrain_probe<T: Scalar>(
    policy: &Policy<T>,
    env_cfg: &EnvConfig,
    lex: &Lexicons,
    salt: u64,
    n: usize,
    access: &mut TaskRewardAccess,
) -> Result<EvalResult> {
    let template = Prompt {
        prompt_id: 0,
        style: PromptStyle::Canonical,
        text: STYLE1_TEMPLATE.to_string(),
        referenced_class: None,
        inverse_fallback: false,
    };
    let mut episodes = Vec::with_capacity(n);
    let mut langs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let s = seed::derive(PROBE_BASE_SEED, &[seed::stream::PROBE, i]);
        let scene = env::reset(env_cfg, s)?;
        let mut rng = seed::rng(s, &[seed::stream::PROBE]);
        let class = scene.objects[rng.random_range(0..scene.objects.len())].class;
        let prompt = resolve_for_class(&template, class, lex, &mut rng)?;
        langs.push(embed_language_salted(&prompt.text, salt));
        episodes.push((s, TaskSpec::new(TaskKind::PickUp, class)));
    }
    let mut ctrl = PolicyController { policy, langs };
    evaluate(&mut ctrl, env_cfg, &episodes, access)
}

/// Index of the best candidate by mean return; ties go to the lowest prompt id.
pub fn select_by_returns(candidates: &[(u32, Vec<f64>)]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Usage("instruction selection needs at least one candidate".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let mut best = 0;
    for (i, (id, r)) in candidates.iter().enumerate().skip(1) {
        let (bid, br) = &candidates[best];
        let (m, bm) = (mean(r), mean(br));
        if m > bm || (m == bm && id < bid) {
            best = i;
        }
    }
    Ok(best)
}

/// Zero-shot instruction tuning: the candidate whose embedding gives the
/// highest mean return under the deterministic policy.
pub fn select_instruction<T: Scalar>(
    policy: &Policy<T>,
    candidates: &[Prompt],
    task: TaskSpec,
    env_cfg: &EnvConfig,
    salt: u64,
    episodes: &[(u64, TaskSpec)],
) -> Result<Prompt> {
    let mut access = TaskRewardAccess::default();
    let scored = candidates
        .iter()
        .map(|p| {
            let lang = embed_language_salted(&p.text, salt);
            let eps: Vec<_> = episodes.iter().map(|(s, _)| (*s, task)).collect();
            evaluate_policy(policy, lang, env_cfg, &eps, &mut access).map(|r| (p.prompt_id, r.returns))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(candidates[select_by_returns(&scored)?].clone())
}
