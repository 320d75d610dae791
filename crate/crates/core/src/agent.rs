//! Language-conditioned actor-critic with twin critics, slow target copies and
//! a replay buffer.
//!
//! The policy head emits a mean and a raw scale per action dimension. The
//! log-std is `LOG_STD_MIN + (LOG_STD_MAX - LOG_STD_MIN)(tanh(raw) + 1)/2`,
//! a smooth clamp into `[LOG_STD_MIN, LOG_STD_MAX]`, and actions are
//! `tanh(mean + std · ε)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoders::{LangEmbedding, VisFeature, LANG_DIM, VIS_DIM};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::explore::ACTION_DIM;
use crate::math::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads, Scalar, Tensor};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const POLICY_IN: usize = VIS_DIM + LANG_DIM;
pub const CRITIC_IN: usize = VIS_DIM + LANG_DIM + ACTION_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    /// Critic updates between full target copies.
    pub target_period: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            gamma: 0.99,
            entropy_coef: 1e-4,
            target_period: 100,
            batch_size: 64,
            buffer_capacity: 100_000,
            adam: AdamConfig {
                eps: 1e-5,
                clip: Some(100.0),
                ..AdamConfig::default()
            },
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_period == 0 {
            return Err(Error::Config("batch_size, buffer_capacity and target_period must be positive".into()));
        }
        if self.entropy_coef < 0.0 || self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive and entropy_coef non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// One stored step: `(o_i, a_i, o_{i+1}, L(x))` plus reward channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub feature: VisFeature,
    pub action: Action,
    pub next_feature: VisFeature,
    pub lang: LangEmbedding,
    pub r_lamp: f64,
    pub r_task: f64,
    pub done: bool,
}

/// Fixed-capacity FIFO ring.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a)
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        if self.items.len() < n {
            return Err(Error::Usage(format!(
                "replay holds {} transitions, {n} requested",
                self.items.len()
            )));
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// Column-stacked tensors for a batch of transitions.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub obs: Tensor<T>,
    pub act: Tensor<T>,
    pub next_obs: Tensor<T>,
    pub lang: Tensor<T>,
    pub done: Vec<bool>,
    pub r_lamp: Vec<f64>,
    pub r_task: Vec<f64>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let n = ts.len();
        let stack = |cols: usize, f: &dyn Fn(&Transition) -> &[f64]| {
            let mut data = Vec::with_capacity(n * cols);
            for t in ts {
                data.extend(f(t).iter().map(|&v| T::lit(v)));
            }
            Tensor::from_vec(&[n, cols], data)
        };
        Ok(Batch {
            obs: stack(VIS_DIM, &|t| &t.feature.0)?,
            act: stack(ACTION_DIM, &|t| &t.action.0)?,
            next_obs: stack(VIS_DIM, &|t| &t.next_feature.0)?,
            lang: stack(LANG_DIM, &|t| &t.lang.0)?,
            done: ts.iter().map(|t| t.done).collect(),
            r_lamp: ts.iter().map(|t| t.r_lamp).collect(),
            r_task: ts.iter().map(|t| t.r_task).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }
}

/// Standard-normal noise of shape `[n, ACTION_DIM]`.
pub fn action_noise<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n * ACTION_DIM)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(&[n, ACTION_DIM], data).expect("sized")
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Everything the reverse pass needs from one reparameterised draw.
struct PolicyDraw<T: Scalar> {
    out: Tensor<T>,
    /// Squashed actions `[n, A]`.
    a: Tensor<T>,
    /// `log π(a | s)` per row.
    logp: Vec<T>,
    std: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Scalar> {
    pub net: Mlp<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut dims = vec![POLICY_IN];
        dims.extend(hidden);
        dims.push(2 * ACTION_DIM);
        Ok(Policy {
            net: Mlp::init(&dims, Activation::Elu, Activation::Identity, rng)?,
        })
    }

    pub fn zeros(hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![POLICY_IN];
        dims.extend(hidden);
        dims.push(2 * ACTION_DIM);
        Ok(Policy {
            net: Mlp::zeros(&dims, Activation::Elu, Activation::Identity)?,
        })
    }

    fn log_std(raw: T) -> T {
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        lo + (hi - lo) * (raw.tanh() + T::one()) * T::lit(0.5)
    }

    /// Squash a head output `[n, 2A]` with noise `[n, A]`.
    fn draw(out: Tensor<T>, eps: &Tensor<T>) -> PolicyDraw<T> {
        let n = out.rows();
        let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let ln2 = T::lit(std::f64::consts::LN_2);
        let mut a = Tensor::zeros(&[n, ACTION_DIM]);
        let mut std = Tensor::zeros(&[n, ACTION_DIM]);
        let mut logp = vec![T::zero(); n];
        for r in 0..n {
            let o = out.row_slice(r);
            let e = eps.row_slice(r);
            for i in 0..ACTION_DIM {
                let ls = Self::log_std(o[ACTION_DIM + i]);
                let s = ls.exp();
                let u = o[i] + s * e[i];
                let ai = u.tanh();
                a.row_slice_mut(r)[i] = ai;
                std.row_slice_mut(r)[i] = s;
                // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
                let log_jac = (ln2 - u - softplus(-(u + u))) * T::lit(2.0);
                logp[r] += -T::lit(0.5) * e[i] * e[i] - ls - half_log_2pi - log_jac;
            }
        }
        PolicyDraw { out, a, logp, std }
    }

    pub fn input(obs: &Tensor<T>, lang: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::hcat(&[obs, lang])
    }

    /// Actions and log-probabilities for a batch, given noise.
    pub fn sample_batch(&self, obs: &Tensor<T>, lang: &Tensor<T>, eps: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let out = self.net.predict(&Self::input(obs, lang)?)?;
        let d = Self::draw(out, eps);
        Ok((d.a, d.logp))
    }

    /// `tanh(mean)` for a batch.
    pub fn mode_batch(&self, obs: &Tensor<T>, lang: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.net.predict(&Self::input(obs, lang)?)?;
        let mut a = Tensor::zeros(&[out.rows(), ACTION_DIM]);
        for r in 0..out.rows() {
            for i in 0..ACTION_DIM {
                a.row_slice_mut(r)[i] = out.row_slice(r)[i].tanh();
            }
        }
        Ok(a)
    }
}

/// Pick an action for one observation.
pub fn act<T: Scalar, R: Rng + ?Sized>(
    policy: &Policy<T>,
    feature: &VisFeature,
    lang: &LangEmbedding,
    mode: ActMode,
    rng: &mut R,
) -> Result<Action> {
    let obs = Tensor::row(feature.0.iter().map(|&v| T::lit(v)).collect());
    let l = Tensor::row(lang.0.iter().map(|&v| T::lit(v)).collect());
    let a = match mode {
        ActMode::Deterministic => policy.mode_batch(&obs, &l)?,
        ActMode::Stochastic => policy.sample_batch(&obs, &l, &action_noise(1, rng))?.0,
    };
    let d = a.data();
    Ok(Action(std::array::from_fn(|i| d[i].to_f64_lossy())))
}

/// Twin Q networks and their slow copies.
#[derive(Debug, Clone)]
pub struct Critics<T: Scalar> {
    pub q: [Mlp<T>; 2],
    pub target: [Mlp<T>; 2],
    updates: u64,
    period: u64,
}

impl<T: Scalar> Critics<T> {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], period: u64, rng: &mut R) -> Result<Self> {
        let mut dims = vec![CRITIC_IN];
        dims.extend(hidden);
        dims.push(1);
        let q1 = Mlp::init(&dims, Activation::Elu, Activation::Identity, rng)?;
        let q2 = Mlp::init(&dims, Activation::Elu, Activation::Identity, rng)?;
        Ok(Self::from_parts([q1, q2], period))
    }

    pub fn from_parts(q: [Mlp<T>; 2], period: u64) -> Self {
        let target = q.clone();
        Critics {
            q,
            target,
            updates: 0,
            period,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn sync_targets(&mut self) {
        for (t, q) in self.target.iter_mut().zip(&self.q) {
            t.copy_from(q);
        }
    }

    /// Freeze both trunks and re-initialise both heads, then resync targets.
    pub fn linear_probe<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for q in &mut self.q {
            q.freeze_trunk();
        }
        self.reset_heads(rng);
    }

    /// Re-initialise both heads and resync targets; trunks stay trainable.
    pub fn reset_heads<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for q in &mut self.q {
            q.reset_head(rng);
        }
        self.sync_targets();
    }

    pub fn input(obs: &Tensor<T>, lang: &Tensor<T>, act: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::hcat(&[obs, lang, act])
    }
}

/// TD targets `r + γ (1 - done) min(Q'_1, Q'_2)(s', a')` with `a'` drawn from
/// the policy under noise `eps_next`.
pub fn td_targets<T: Scalar>(
    policy: &Policy<T>,
    critics: &Critics<T>,
    batch: &Batch<T>,
    rewards: &[T],
    gamma: T,
    eps_next: &Tensor<T>,
) -> Result<Vec<T>> {
    let (a_next, _) = policy.sample_batch(&batch.next_obs, &batch.lang, eps_next)?;
    let x = Critics::input(&batch.next_obs, &batch.lang, &a_next)?;
    let t1 = critics.target[0].predict(&x)?;
    let t2 = critics.target[1].predict(&x)?;
    let y: Vec<T> = (0..batch.len())
        .map(|r| {
            let boot = if batch.done[r] {
                T::zero()
            } else {
                t1.data()[r].min(t2.data()[r])
            };
            rewards[r] + gamma * boot
        })
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("TD target is not finite".into()));
    }
    Ok(y)
}

/// `mean_b [(Q1 - y)² + (Q2 - y)²]` and its parameter gradients.
pub fn critic_loss_and_grads<T: Scalar>(
    critics: &Critics<T>,
    batch: &Batch<T>,
    targets: &[T],
) -> Result<(T, [MlpGrads<T>; 2])> {
    let x = Critics::input(&batch.obs, &batch.lang, &batch.act)?;
    let n = T::lit(batch.len() as f64);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(2);
    for q in &critics.q {
        let (pred, tape) = q.forward(&x)?;
        let mut g = Tensor::zeros(pred.shape());
        for r in 0..batch.len() {
            let d = pred.data()[r] - targets[r];
            loss += d * d / n;
            g.data_mut()[r] = (d + d) / n;
        }
        grads.push(q.backward(&tape, &g)?.0);
    }
    let g2 = grads.pop().expect("two critics");
    let g1 = grads.pop().expect("two critics");
    Ok((loss, [g1, g2]))
}

/// `mean_b [β log π(a|s) - min(Q1, Q2)(s, a)]` for reparameterised actions
/// under noise `eps`, and its gradient with respect to the policy parameters.
pub fn actor_loss_and_grads<T: Scalar>(
    policy: &Policy<T>,
    critics: &Critics<T>,
    batch: &Batch<T>,
    entropy_coef: T,
    eps: &Tensor<T>,
) -> Result<(T, MlpGrads<T>)> {
    let n = batch.len();
    let nt = T::lit(n as f64);
    let (out, tape) = policy.net.forward(&Policy::input(&batch.obs, &batch.lang)?)?;
    let draw = Policy::draw(out, eps);
    let x = Critics::input(&batch.obs, &batch.lang, &draw.a)?;
    let (q1, tape1) = critics.q[0].forward(&x)?;
    let (q2, tape2) = critics.q[1].forward(&x)?;

    let mut loss = T::zero();
    let mut g1 = Tensor::zeros(&[n, 1]);
    let mut g2 = Tensor::zeros(&[n, 1]);
    for r in 0..n {
        let (a, b) = (q1.data()[r], q2.data()[r]);
        // Ties go to the first critic.
        if a <= b {
            g1.data_mut()[r] = -T::one() / nt;
            loss += (entropy_coef * draw.logp[r] - a) / nt;
        } else {
            g2.data_mut()[r] = -T::one() / nt;
            loss += (entropy_coef * draw.logp[r] - b) / nt;
        }
    }
    let dx1 = critics.q[0].backward_input(&tape1, &g1)?;
    let dx2 = critics.q[1].backward_input(&tape2, &g2)?;
    let a_off = VIS_DIM + LANG_DIM;

    let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
    let half_span = (hi - lo) * T::lit(0.5);
    let mut g_out = Tensor::zeros(draw.out.shape());
    for r in 0..n {
        let o = draw.out.row_slice(r);
        for i in 0..ACTION_DIM {
            let ai = draw.a.row_slice(r)[i];
            let dl_da = dx1.row_slice(r)[a_off + i] + dx2.row_slice(r)[a_off + i];
            // d log π / du through the squash is 2a.
            let dl_du = dl_da * (T::one() - ai * ai) + entropy_coef * (ai + ai) / nt;
            let dl_dls = dl_du * draw.std.row_slice(r)[i] * eps.row_slice(r)[i] - entropy_coef / nt;
            let th = o[ACTION_DIM + i].tanh();
            let row = g_out.row_slice_mut(r);
            row[i] = dl_du;
            row[ACTION_DIM + i] = dl_dls * half_span * (T::one() - th * th);
        }
    }
    let (grads, _) = policy.net.backward(&tape, &g_out)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct Agent<T: Scalar> {
    pub config: AgentConfig,
    pub policy: Policy<T>,
    pub critics: Critics<T>,
    actor_opt: AdamState<T>,
    critic_opt: [AdamState<T>; 2],
}

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy = Policy::new(&config.hidden, rng)?;
        let critics = Critics::new(&config.hidden, config.target_period, rng)?;
        Ok(Self::from_parts(config, policy, critics))
    }

    pub fn from_parts(config: AgentConfig, policy: Policy<T>, mut critics: Critics<T>) -> Self {
        critics.period = config.target_period;
        let actor_opt = AdamState::new(&policy.net, config.adam);
        let critic_opt = [
            AdamState::new(&critics.q[0], config.adam),
            AdamState::new(&critics.q[1], config.adam),
        ];
        Agent {
            config,
            policy,
            critics,
            actor_opt,
            critic_opt,
        }
    }

    /// Fresh optimiser state, e.g. after switching to a linear probe.
    pub fn reset_optimizers(&mut self) {
        self.actor_opt = AdamState::new(&self.policy.net, self.config.adam);
        self.critic_opt = [
            AdamState::new(&self.critics.q[0], self.config.adam),
            AdamState::new(&self.critics.q[1], self.config.adam),
        ];
    }

    /// One TD(0) step on both critics; copies targets every `target_period` updates.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rewards: &[T], rng: &mut R) -> Result<T> {
        if batch.is_empty() || rewards.len() != batch.len() {
            return Err(Error::Usage("critic update needs a non-empty batch with one reward per row".into()));
        }
        let eps = action_noise(batch.len(), rng);
        let y = td_targets(&self.policy, &self.critics, batch, rewards, T::lit(self.config.gamma), &eps)?;
        let (loss, [g1, g2]) = critic_loss_and_grads(&self.critics, batch, &y)?;
        if !loss.is_finite() {
            return Err(Error::Training("critic loss is not finite".into()));
        }
        let lr = T::lit(self.config.critic_lr);
        let [o1, o2] = &mut self.critic_opt;
        let [q1, q2] = &mut self.critics.q;
        adam_step(q1, &g1, o1, lr)?;
        adam_step(q2, &g2, o2, lr)?;
        self.critics.updates += 1;
        if self.critics.updates % self.critics.period == 0 {
            self.critics.sync_targets();
        }
        Ok(loss)
    }

    /// One entropy-regularised policy step against the current critics.
    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Usage("actor update needs a non-empty batch".into()));
        }
        let eps = action_noise(batch.len(), rng);
        let (loss, g) = actor_loss_and_grads(&self.policy, &self.critics, batch, T::lit(self.config.entropy_coef), &eps)?;
        if !loss.is_finite() {
            return Err(Error::Training("actor loss is not finite".into()));
        }
        adam_step(&mut self.policy.net, &g, &mut self.actor_opt, T::lit(self.config.actor_lr))?;
        Ok(loss)
    }
}
