//! Novelty bonuses: disagreement of an ensemble of one-step predictors, and
//! random network distillation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::VIS_DIM;
use crate::env::Action;
use crate::error::{Error, Result};
use crate::math::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads, Scalar, Tensor};

pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub adam: AdamConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 10,
            hidden: vec![64],
            lr: 3e-4,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RndConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub adam: AdamConfig,
}

impl Default for RndConfig {
    fn default() -> Self {
        RndConfig {
            embedding_dim: 512,
            hidden: 256,
            lr: 3e-4,
            adam: AdamConfig::default(),
        }
    }
}

/// `[feature | action]` rows.
pub fn ensemble_input<T: Scalar>(features: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::hcat(&[features, actions])
}

/// Population variance across members, averaged over output dimensions, per row.
///
/// Uses the pairwise form `Σ_{i<j} (x_i - x_j)² / K²`, which is exactly zero
/// when all members agree.
fn disagreement<T: Scalar>(preds: &[Tensor<T>]) -> Vec<T> {
    let k = preds.len();
    let (rows, cols) = (preds[0].rows(), preds[0].cols());
    let norm = T::lit((k * k * cols) as f64);
    (0..rows)
        .map(|r| {
            let mut total = T::zero();
            for i in 0..k {
                let a = preds[i].row_slice(r);
                for p in &preds[i + 1..] {
                    total += a.iter().zip(p.row_slice(r)).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
                }
            }
            total / norm
        })
        .collect()
}

/// Mean squared error over all entries and its gradient with respect to `pred`.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, Tensor<T>) {
    let n = T::lit(pred.len() as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = T::zero();
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = (d + d) / n;
    }
    (loss / n, grad)
}

#[derive(Debug, Clone)]
pub struct Ensemble<T: Scalar> {
    pub config: EnsembleConfig,
    members: Vec<Mlp<T>>,
    opt: Vec<AdamState<T>>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new<R: Rng + ?Sized>(config: EnsembleConfig, rng: &mut R) -> Result<Self> {
        if config.members < 2 {
            return Err(Error::Config("an ensemble needs at least two members".into()));
        }
        let mut dims = vec![VIS_DIM + ACTION_DIM];
        dims.extend(&config.hidden);
        dims.push(VIS_DIM);
        let members = (0..config.members)
            .map(|_| Mlp::init(&dims, Activation::Elu, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_members(config, members))
    }

    pub fn from_members(config: EnsembleConfig, members: Vec<Mlp<T>>) -> Self {
        let opt = members.iter().map(|m| AdamState::new(m, config.adam)).collect();
        Ensemble { config, members, opt }
    }

    pub fn members(&self) -> &[Mlp<T>] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.members
    }

    /// Disagreement for each row of `input` (see [`ensemble_input`]).
    pub fn bonus_batch(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        let preds = self
            .members
            .iter()
            .map(|m| m.predict(input))
            .collect::<Result<Vec<_>>>()?;
        Ok(disagreement(&preds))
    }

    /// Regression loss of one member onto `next` and its parameter gradient.
    pub fn member_loss_and_grads(member: &Mlp<T>, input: &Tensor<T>, next: &Tensor<T>) -> Result<(T, MlpGrads<T>)> {
        let (pred, tape) = member.forward(input)?;
        let (loss, grad) = mse(&pred, next);
        let (g, _) = member.backward(&tape, &grad)?;
        Ok((loss, g))
    }

    /// One Adam step per member regressing onto `next`; returns the mean loss.
    pub fn update(&mut self, input: &Tensor<T>, next: &Tensor<T>) -> Result<T> {
        let mut total = T::zero();
        for (m, opt) in self.members.iter_mut().zip(&mut self.opt) {
            let (loss, g) = Self::member_loss_and_grads(m, input, next)?;
            if !loss.is_finite() {
                return Err(Error::Training("ensemble loss is not finite".into()));
            }
            adam_step(m, &g, opt, T::lit(self.config.lr))?;
            total += loss;
        }
        Ok(total / T::lit(self.members.len() as f64))
    }
}

/// Disagreement of the ensemble on a single transition.
pub fn disagreement_bonus<T: Scalar>(ensemble: &Ensemble<T>, feature: &[f64], action: &Action) -> Result<T> {
    let row: Vec<T> = feature.iter().chain(&action.0).map(|&v| T::lit(v)).collect();
    Ok(ensemble.bonus_batch(&Tensor::row(row))?[0])
}

#[derive(Debug, Clone)]
pub struct Rnd<T: Scalar> {
    pub config: RndConfig,
    target: Mlp<T>,
    predictor: Mlp<T>,
    opt: AdamState<T>,
}

impl<T: Scalar> Rnd<T> {
    pub fn new<R: Rng + ?Sized>(config: RndConfig, rng: &mut R) -> Result<Self> {
        let dims = [VIS_DIM, config.hidden, config.embedding_dim];
        let target = Mlp::init(&dims, Activation::Elu, Activation::Identity, rng)?;
        let predictor = Mlp::init(&dims, Activation::Elu, Activation::Identity, rng)?;
        Ok(Self::from_parts(config, target, predictor))
    }

    pub fn from_parts(config: RndConfig, target: Mlp<T>, predictor: Mlp<T>) -> Self {
        let opt = AdamState::new(&predictor, config.adam);
        Rnd {
            config,
            target,
            predictor,
            opt,
        }
    }

    pub fn target(&self) -> &Mlp<T> {
        &self.target
    }

    pub fn predictor(&self) -> &Mlp<T> {
        &self.predictor
    }

    pub fn predictor_mut(&mut self) -> &mut Mlp<T> {
        &mut self.predictor
    }

    /// Mean squared embedding error for each row of `features`.
    pub fn bonus_batch(&self, features: &Tensor<T>) -> Result<Vec<T>> {
        let t = self.target.predict(features)?;
        let p = self.predictor.predict(features)?;
        let d = T::lit(t.cols() as f64);
        Ok((0..t.rows())
            .map(|r| {
                t.row_slice(r)
                    .iter()
                    .zip(p.row_slice(r))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    / d
            })
            .collect())
    }

    /// Distillation loss of the predictor and its parameter gradient.
    pub fn loss_and_grads(&self, features: &Tensor<T>) -> Result<(T, MlpGrads<T>)> {
        let target = self.target.predict(features)?;
        let (pred, tape) = self.predictor.forward(features)?;
        let (loss, grad) = mse(&pred, &target);
        let (g, _) = self.predictor.backward(&tape, &grad)?;
        Ok((loss, g))
    }

    /// One Adam step of the predictor; the target is never touched.
    pub fn update(&mut self, features: &Tensor<T>) -> Result<T> {
        let (loss, g) = self.loss_and_grads(features)?;
        if !loss.is_finite() {
            return Err(Error::Training("RND loss is not finite".into()));
        }
        adam_step(&mut self.predictor, &g, &mut self.opt, T::lit(self.config.lr))?;
        Ok(loss)
    }
}

pub fn rnd_bonus<T: Scalar>(rnd: &Rnd<T>, feature: &[f64]) -> Result<T> {
    let row: Vec<T> = feature.iter().map(|&v| T::lit(v)).collect();
    Ok(rnd.bonus_batch(&Tensor::row(row))?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorerKind {
    Disagreement,
    Rnd,
}

/// The exploration model a run trains alongside the agent.
#[derive(Debug, Clone)]
pub enum Explorer<T: Scalar> {
    Disagreement(Ensemble<T>),
    Rnd(Rnd<T>),
}

impl<T: Scalar> Explorer<T> {
    pub fn new<R: Rng + ?Sized>(kind: ExplorerKind, ens: &EnsembleConfig, rnd: &RndConfig, rng: &mut R) -> Result<Self> {
        Ok(match kind {
            ExplorerKind::Disagreement => Explorer::Disagreement(Ensemble::new(ens.clone(), rng)?),
            ExplorerKind::Rnd => Explorer::Rnd(Rnd::new(rnd.clone(), rng)?),
        })
    }

    pub fn bonus_batch(&self, features: &Tensor<T>, actions: &Tensor<T>) -> Result<Vec<T>> {
        match self {
            Explorer::Disagreement(e) => e.bonus_batch(&ensemble_input(features, actions)?),
            Explorer::Rnd(r) => r.bonus_batch(features),
        }
    }

    /// One training step on a batch of transitions; returns the mean loss.
    pub fn update(&mut self, features: &Tensor<T>, actions: &Tensor<T>, next: &Tensor<T>) -> Result<T> {
        match self {
            Explorer::Disagreement(e) => e.update(&ensemble_input(features, actions)?, next),
            Explorer::Rnd(r) => r.update(features),
        }
    }
}

/// Trains `explorer` on one batch; the spec-level name for [`Explorer::update`].
pub fn update_explorers<T: Scalar>(
    explorer: &mut Explorer<T>,
    features: &Tensor<T>,
    actions: &Tensor<T>,
    next: &Tensor<T>,
) -> Result<T> {
    explorer.update(features, actions, next)
}
