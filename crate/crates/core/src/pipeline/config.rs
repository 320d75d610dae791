use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::env::{EnvConfig, ObjectClass, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::explore::{EnsembleConfig, ExplorerKind, RndConfig};
use crate::prompts::PromptStyle;
use crate::scorers::{MixConfig, ScorerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Pretrain,
    Finetune,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Pretrain => "pretrain",
            RunMode::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// How the pretrained critics enter finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticFinetune {
    /// Frozen trunks, fresh heads.
    LinearProbe,
    /// Fresh heads, everything trainable.
    ResetHead,
    /// Pretrained critics trained as they are.
    Full,
}

/// Everything a pretraining or finetuning run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub seed: u64,
    /// Environment steps.
    pub steps: u64,
    /// Steps collected before the first gradient update; actions are uniform
    /// random until then.
    pub warmup: u64,
    /// Environment steps per gradient update.
    pub update_every: u64,
    /// Critic-only updates before the first actor update.
    pub actor_delay: u64,
    /// Environment steps between metric rows.
    pub eval_every: u64,
    /// Episodes per finetuning evaluation.
    pub eval_episodes: usize,
    /// Held-out episodes for the pick-up probe logged during pretraining.
    pub probe_episodes: usize,
    /// Weight of the exploration channel in the mixed reward.
    pub alpha: f64,
    pub normalize_rewards: bool,
    pub explorer: ExplorerKind,
    /// Update the explorer during finetuning as well.
    pub finetune_explorer: bool,
    pub scorer: ScorerConfig,
    pub prompt_style: PromptStyle,
    pub prompt_count: usize,
    /// Downstream task for finetuning.
    pub task: TaskSpec,
    /// Conditioning text for finetuning; defaults to the canonical prompt for the target class.
    pub prompt: Option<String>,
    /// Treatment of the pretrained critics at the start of finetuning.
    pub critic_finetune: CriticFinetune,
    /// Single worker, and the wall-clock column is written as 0.
    pub deterministic: bool,
    pub precision: Precision,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub ensemble: EnsembleConfig,
    pub rnd: RndConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::Pretrain,
            seed: 0,
            steps: 100_000,
            warmup: 1_000,
            update_every: 1,
            actor_delay: 0,
            eval_every: 1_000,
            eval_episodes: 10,
            probe_episodes: 20,
            alpha: 0.9,
            normalize_rewards: true,
            explorer: ExplorerKind::Disagreement,
            finetune_explorer: true,
            scorer: ScorerConfig::default(),
            prompt_style: PromptStyle::RelevantSynonym,
            prompt_count: 200,
            task: TaskSpec::new(TaskKind::PickUp, ObjectClass::Mug),
            prompt: None,
            critic_finetune: CriticFinetune::LinearProbe,
            deterministic: true,
            precision: Precision::F32,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            ensemble: EnsembleConfig::default(),
            rnd: RndConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.scorer.validate()?;
        self.task.validate()?;
        self.mix().validate()?;
        if self.update_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("update_every and eval_every must be positive".into()));
        }
        if self.eval_episodes == 0 || self.probe_episodes == 0 || self.prompt_count == 0 {
            return Err(Error::Config("eval_episodes, probe_episodes and prompt_count must be positive".into()));
        }
        if self.ensemble.members < 2 {
            return Err(Error::Config("the ensemble needs at least two members".into()));
        }
        if self.agent.batch_size > self.agent.buffer_capacity {
            return Err(Error::Config("batch_size exceeds buffer_capacity".into()));
        }
        Ok(())
    }

    pub fn mix(&self) -> MixConfig {
        if self.normalize_rewards {
            MixConfig {
                alpha: self.alpha,
                ..MixConfig::default()
            }
        } else {
            MixConfig::unnormalized(self.alpha)
        }
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::Config(format!("{}: {other}", path.display())),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Environment used for finetuning and evaluation on `self.task`.
    pub fn task_env(&self) -> EnvConfig {
        EnvConfig {
            mode: crate::env::EnvMode::Finetune,
            required_class: Some(self.task.target_class),
            ..self.env.clone()
        }
    }

    /// Environment used for pretraining rollouts.
    pub fn pretrain_env(&self) -> EnvConfig {
        EnvConfig {
            mode: crate::env::EnvMode::Pretrain,
            ..self.env.clone()
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"alpha": 0.5, "alhpa": 0.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"agent": {"gama": 0.9}}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"alpha": 0.5, "seed": 3, "prompt_style": 6}"#).unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.prompt_style, PromptStyle::Distractor);
        assert_eq!(cfg.steps, RunConfig::default().steps);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sha256_matches_known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn bad_alpha_is_rejected() {
        assert!(RunConfig::from_json(r#"{"alpha": 1.5}"#).is_err());
    }
}
