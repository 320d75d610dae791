use serde::{Deserialize, Serialize};

use super::{dist, EnvConfig, ObjectClass, SceneState, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    PickUp,
    PlaceOnTarget,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::PickUp => "pick_up",
            TaskKind::PlaceOnTarget => "place_on_target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TaskKind::Reach, TaskKind::PickUp, TaskKind::PlaceOnTarget]
            .into_iter()
            .find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub target_class: ObjectClass,
    #[serde(default)]
    pub target_zone: Option<Vec3>,
    #[serde(default = "default_success_threshold")]
    pub success_threshold: f64,
}

fn default_success_threshold() -> f64 {
    0.05
}

impl TaskSpec {
    pub fn new(kind: TaskKind, target_class: ObjectClass) -> Self {
        TaskSpec {
            kind,
            target_class,
            target_zone: match kind {
                TaskKind::PlaceOnTarget => Some([0.8, 0.2, 0.0]),
                _ => None,
            },
            success_threshold: default_success_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == TaskKind::PlaceOnTarget && self.target_zone.is_none() {
            return Err(Error::Config("place_on_target needs a target_zone".into()));
        }
        if let Some(z) = self.target_zone {
            if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("target_zone must lie in the unit cube".into()));
            }
        }
        if self.success_threshold <= 0.0 {
            return Err(Error::Config("success_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskReward {
    pub reward: f64,
    pub success: bool,
}

/// `1 - clamp(d / scale, 0, 1)`
#[inline]
pub(crate) fn closeness(d: f64, scale: f64) -> f64 {
    1.0 - (d / scale).clamp(0.0, 1.0)
}

/// Shaped pick-up progress of one object: half approach, a quarter for holding
/// it, a quarter for lifting it.
#[inline]
pub(crate) fn pick_progress(distance: f64, grasped: bool, z: f64, config: &EnvConfig) -> f64 {
    0.5 * closeness(distance, config.reach_scale)
        + if grasped { 0.25 } else { 0.0 }
        + 0.25 * (z / config.lift_height).clamp(0.0, 1.0)
}

/// Scripted shaped reward in `[0, 1]` and success predicate.
pub fn task_reward(config: &EnvConfig, state: &SceneState, task: &TaskSpec) -> Result<TaskReward> {
    let obj = state
        .find(task.target_class)
        .ok_or_else(|| Error::Task(format!("target class {} is not in the scene", task.target_class)))?;
    let d = dist(state.ee_pos, obj.position);
    let eps = task.success_threshold;
    let out = match task.kind {
        TaskKind::Reach => TaskReward {
            reward: closeness(d, config.reach_scale),
            success: d < eps,
        },
        TaskKind::PickUp => TaskReward {
            reward: pick_progress(d, obj.grasped, obj.position[2], config),
            success: obj.grasped && obj.position[2] >= config.lift_height,
        },
        TaskKind::PlaceOnTarget => {
            let zone = task
                .target_zone
                .ok_or_else(|| Error::Task("place_on_target without target_zone".into()))?;
            let dz = dist(obj.position, zone);
            let placed = dz < eps && !obj.grasped;
            // A placed object has completed the pick phase.
            let pick = if placed {
                1.0
            } else {
                pick_progress(d, obj.grasped, obj.position[2], config)
            };
            TaskReward {
                reward: 0.5 * pick + 0.5 * closeness(dz, config.reach_scale),
                success: placed,
            }
        }
    };
    Ok(out)
}
