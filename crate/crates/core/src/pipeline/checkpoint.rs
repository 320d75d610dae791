use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::agent::{Agent, Critics, Policy};
use crate::error::{Error, Result};
use crate::explore::{Ensemble, Explorer, ExplorerKind, Rnd};
use crate::math::{Scalar, TensorBundle};
use crate::scorers::MixConfig;
use crate::seed;

pub const BLOB_FILE: &str = "checkpoint.bin";
pub const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub step: u64,
    pub config_hash: String,
    /// `None` for checkpoints that never saw a prompt dataset (fresh initialisations).
    pub prompt_dataset_hash: Option<String>,
    pub explorer: ExplorerKind,
    pub mix: MixConfig,
}

/// Agent, explorer and reward-normalizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: TensorBundle,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        agent: &Agent<T>,
        explorer: &Explorer<T>,
        mix: MixConfig,
        step: u64,
        config_hash: String,
        prompt_dataset_hash: Option<String>,
    ) -> Self {
        let mut b = TensorBundle::default();
        b.push_mlp("policy", &agent.policy.net);
        for k in 0..2 {
            b.push_mlp(&format!("critic{k}"), &agent.critics.q[k]);
            b.push_mlp(&format!("critic{k}.target"), &agent.critics.target[k]);
        }
        let kind = match explorer {
            Explorer::Disagreement(e) => {
                for (i, m) in e.members().iter().enumerate() {
                    b.push_mlp(&format!("ensemble{i}"), m);
                }
                ExplorerKind::Disagreement
            }
            Explorer::Rnd(r) => {
                b.push_mlp("rnd.target", r.target());
                b.push_mlp("rnd.predictor", r.predictor());
                ExplorerKind::Rnd
            }
        };
        Checkpoint {
            meta: CheckpointMeta {
                step,
                config_hash,
                prompt_dataset_hash,
                explorer: kind,
                mix,
            },
            tensors: b,
        }
    }

    /// The state a run with `config` starts from.
    pub fn fresh<T: Scalar>(config: &RunConfig) -> Result<Self> {
        let (agent, explorer) = init_models::<T>(config)?;
        Ok(Self::capture(&agent, &explorer, config.mix(), 0, config.hash(), None))
    }

    /// Rebuild the agent with the shapes of `config`; mismatched shapes are errors.
    pub fn restore_agent<T: Scalar>(&self, config: &RunConfig) -> Result<Agent<T>> {
        let (mut agent, _) = init_models::<T>(config)?;
        self.tensors.load_mlp("policy", &mut agent.policy.net)?;
        for k in 0..2 {
            self.tensors.load_mlp(&format!("critic{k}"), &mut agent.critics.q[k])?;
            self.tensors.load_mlp(&format!("critic{k}.target"), &mut agent.critics.target[k])?;
        }
        agent.reset_optimizers();
        Ok(agent)
    }

    pub fn restore_explorer<T: Scalar>(&self, config: &RunConfig) -> Result<Explorer<T>> {
        if self.meta.explorer != config.explorer {
            return Err(Error::Checkpoint(format!(
                "checkpoint explorer {:?} does not match configured {:?}",
                self.meta.explorer, config.explorer
            )));
        }
        let (_, mut explorer) = init_models::<T>(config)?;
        match &mut explorer {
            Explorer::Disagreement(e) => {
                let stored = (0..)
                    .take_while(|i| self.tensors.get(&format!("ensemble{i}.0.weight")).is_some())
                    .count();
                if stored != e.members().len() {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint has {stored} ensemble members, config expects {}",
                        e.members().len()
                    )));
                }
                for (i, m) in e.members_mut().iter_mut().enumerate() {
                    self.tensors.load_mlp(&format!("ensemble{i}"), m)?;
                }
                *e = Ensemble::from_members(config.ensemble.clone(), e.members().to_vec());
            }
            Explorer::Rnd(r) => {
                let mut target = r.target().clone();
                let mut predictor = r.predictor().clone();
                self.tensors.load_mlp("rnd.target", &mut target)?;
                self.tensors.load_mlp("rnd.predictor", &mut predictor)?;
                *r = Rnd::from_parts(config.rnd.clone(), target, predictor);
            }
        }
        Ok(explorer)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.tensors.save(&dir.join(BLOB_FILE))?;
        let meta = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&meta, text).map_err(|e| Error::io(meta, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path: PathBuf = dir.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let tensors = TensorBundle::load(&dir.join(BLOB_FILE))?;
        Ok(Checkpoint { meta, tensors })
    }
}

/// Seeded initial agent and explorer for a run.
pub(crate) fn init_models<T: Scalar>(config: &RunConfig) -> Result<(Agent<T>, Explorer<T>)> {
    let mut rng = seed::rng(config.seed, &[seed::stream::INIT, 0]);
    let policy = Policy::new(&config.agent.hidden, &mut rng)?;
    let critics = Critics::new(&config.agent.hidden, config.agent.target_period, &mut rng)?;
    let agent = Agent::from_parts(config.agent.clone(), policy, critics);
    let explorer = Explorer::new(
        config.explorer,
        &config.ensemble,
        &config.rnd,
        &mut seed::rng(config.seed, &[seed::stream::INIT, 1]),
    )?;
    Ok((agent, explorer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.agent.hidden = vec![8];
        c.ensemble.members = 3;
        c.ensemble.hidden = vec![8];
        c.rnd.hidden = 8;
        c.rnd.embedding_dim = 4;
        c
    }

    #[test]
    fn save_load_roundtrip_restores_networks() {
        let cfg = small();
        let ck = Checkpoint::fresh::<f32>(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        let (agent, _) = init_models::<f32>(&cfg).unwrap();
        let restored = back.restore_agent::<f32>(&cfg).unwrap();
        assert_eq!(restored.policy, agent.policy);
        assert_eq!(restored.critics.q, agent.critics.q);
    }

    #[test]
    fn rnd_explorer_roundtrips() {
        let cfg = RunConfig {
            explorer: ExplorerKind::Rnd,
            ..small()
        };
        let ck = Checkpoint::fresh::<f64>(&cfg).unwrap();
        let e: Explorer<f64> = ck.restore_explorer(&cfg).unwrap();
        let Explorer::Rnd(r) = e else { panic!("kind") };
        let (_, Explorer::Rnd(orig)) = init_models::<f64>(&cfg).unwrap() else { panic!("kind") };
        assert_eq!(r.predictor(), orig.predictor());
        assert_eq!(r.target(), orig.target());
    }

    #[test]
    fn mismatched_widths_fail_to_load() {
        let ck = Checkpoint::fresh::<f32>(&small()).unwrap();
        let mut wide = small();
        wide.agent.hidden = vec![16];
        assert!(matches!(ck.restore_agent::<f32>(&wide), Err(Error::Checkpoint(_))));
        let mut more = small();
        more.ensemble.members = 4;
        assert!(matches!(ck.restore_explorer::<f32>(&more), Err(Error::Checkpoint(_))));
    }
}
