//! JSON-lines trajectory dumps, one transition per line.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{step, Action, EnvConfig, SceneState};
use crate::error::{Error, Result};

/// Transition `t`: the state before the action, the action, and whatever
/// reward channels the producer attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub t: usize,
    pub state: SceneState,
    pub action: Action,
    pub reward_channels: BTreeMap<String, f64>,
    pub prompt_id: Option<u32>,
}

pub fn to_jsonl(records: &[TransitionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<TransitionRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_jsonl(path: &Path, records: &[TransitionRecord]) -> Result<()> {
    std::fs::write(path, to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TransitionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text)
}

/// States `s_0 ..= s_T` of one episode, replaying the final action to recover `s_T`.
pub fn episode_states(config: &EnvConfig, records: &[TransitionRecord]) -> Result<Vec<SceneState>> {
    let last = records
        .last()
        .ok_or_else(|| Error::Usage("empty trajectory".into()))?;
    for (i, r) in records.iter().enumerate() {
        if r.t != i {
            return Err(Error::Usage(format!("trajectory record {i} has t = {}", r.t)));
        }
    }
    let mut states: Vec<SceneState> = records.iter().map(|r| r.state.clone()).collect();
    states.push(step(config, &last.state, last.action)?.0);
    Ok(states)
}
