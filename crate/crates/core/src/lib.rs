//! Language-modulated reward pretraining at desk scale.
//!
//! A frozen, synthetic vision-language scorer rewards a language-conditioned
//! actor-critic for progress toward instructions sampled from a prompt
//! grammar, mixed with an ensemble-disagreement novelty bonus. The pretrained
//! agent is then finetuned on scripted task rewards in a procedural tabletop
//! simulator.
//!
//! Every network is generic over [`math::Scalar`]; the aliases below pin the
//! two supported precisions.

pub mod agent;
pub mod encoders;
pub mod env;
pub mod error;
pub mod explore;
pub mod math;
pub mod pipeline;
pub mod prompts;
pub mod scorers;
pub mod seed;

pub use error::{Error, Result};

/// 64-bit networks (gradient checks, reproducibility runs).
pub type Mlp64 = math::Mlp<f64>;
/// 32-bit networks (fast runs).
pub type Mlp32 = math::Mlp<f32>;
pub type Tensor64 = math::Tensor<f64>;
pub type Tensor32 = math::Tensor<f32>;
