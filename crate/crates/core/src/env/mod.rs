//! Procedural tabletop simulator.
//!
//! Objects sit in the unit cube with the table at `z = 0`. The end effector
//! translates by `step_scale · (dx, dy, dz)` per step, the gripper closes when
//! the fourth action component is positive, and a closed empty gripper picks
//! up the nearest object inside `grasp_radius`. There is no physics: a
//! released object stays where it was let go.

mod expert;
mod task;
pub mod trajectory;

pub use expert::expert_policy;
pub use task::{task_reward, TaskKind, TaskReward, TaskSpec};
pub use trajectory::TransitionRecord;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type Vec3 = [f64; 3];

pub const NUM_CLASSES: usize = 8;
pub const NUM_TEXTURES: u32 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Bag,
    Mug,
    Cup,
    Bowl,
    Button,
    Phone,
    Lid,
    Block,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [
        ObjectClass::Bag,
        ObjectClass::Mug,
        ObjectClass::Cup,
        ObjectClass::Bowl,
        ObjectClass::Button,
        ObjectClass::Phone,
        ObjectClass::Lid,
        ObjectClass::Block,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Bag => "bag",
            ObjectClass::Mug => "mug",
            ObjectClass::Cup => "cup",
            ObjectClass::Bowl => "bowl",
            ObjectClass::Button => "button",
            ObjectClass::Phone => "phone",
            ObjectClass::Lid => "lid",
            ObjectClass::Block => "block",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub class: ObjectClass,
    pub position: Vec3,
    pub grasped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub ee_pos: Vec3,
    pub gripper_closed: bool,
    pub objects: Vec<ObjectInstance>,
    /// 0 is the default texture; 1..=96 are randomized textures.
    pub texture_id: u32,
    pub step_index: usize,
    pub horizon: usize,
    pub episode_seed: u64,
}

impl SceneState {
    pub fn is_terminal(&self) -> bool {
        self.step_index >= self.horizon
    }

    pub fn find(&self, class: ObjectClass) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.class == class)
    }

    pub fn grasped_index(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.grasped)
    }
}

/// A 4-vector `(dx, dy, dz, gripper)` with every component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; 4]);

impl Action {
    /// Clamp into `[-1, 1]`; NaN components become 0.
    pub fn sanitized(raw: [f64; 4]) -> Self {
        Action(raw.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }))
    }

    pub fn idle_open() -> Self {
        Action([0.0, 0.0, 0.0, -1.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvMode {
    /// Randomized textures, random object classes.
    Pretrain,
    /// Default texture only.
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub mode: EnvMode,
    pub horizon: usize,
    pub step_scale: f64,
    pub grasp_radius: f64,
    pub lift_height: f64,
    /// Distance normaliser for reach-style shaping terms.
    pub reach_scale: f64,
    pub success_eps: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_separation: f64,
    pub default_texture_prob: f64,
    /// Class that must appear in every scene (downstream tasks need their target).
    pub required_class: Option<ObjectClass>,
    pub ee_start: Vec3,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            mode: EnvMode::Pretrain,
            horizon: 100,
            step_scale: 0.05,
            grasp_radius: 0.07,
            lift_height: 0.3,
            reach_scale: 1.0,
            success_eps: 0.05,
            min_objects: 1,
            max_objects: 3,
            min_separation: 0.1,
            default_texture_prob: 0.2,
            required_class: None,
            ee_start: [0.5, 0.5, 0.4],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.max_objects == 0 {
            return Err(Error::Config("scenes need at least one object".into()));
        }
        if self.min_objects > self.max_objects || self.max_objects > NUM_CLASSES {
            return Err(Error::Config(format!(
                "object count range {}..={} is invalid (at most {NUM_CLASSES} classes)",
                self.min_objects, self.max_objects
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.default_texture_prob) {
            return Err(Error::Config("default_texture_prob must be in [0, 1]".into()));
        }
        if self.step_scale <= 0.0 || self.reach_scale <= 0.0 || self.lift_height <= 0.0 {
            return Err(Error::Config("scales must be positive".into()));
        }
        if self.ee_start.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("ee_start must lie in the unit cube".into()));
        }
        Ok(())
    }
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Fresh scene for `episode_seed`.
pub fn reset(config: &EnvConfig, episode_seed: u64) -> Result<SceneState> {
    config.validate()?;
    let mut rng = seed::rng(episode_seed, &[seed::stream::EPISODE]);

    let texture_id = match config.mode {
        EnvMode::Finetune => 0,
        EnvMode::Pretrain => {
            if rng.random_bool(config.default_texture_prob) {
                0
            } else {
                rng.random_range(1..=NUM_TEXTURES)
            }
        }
    };

    let count = rng.random_range(config.min_objects..=config.max_objects);
    let mut classes: Vec<ObjectClass> = Vec::with_capacity(count);
    if let Some(c) = config.required_class {
        classes.push(c);
    }
    while classes.len() < count {
        let c = ObjectClass::ALL[rng.random_range(0..NUM_CLASSES)];
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    // Shuffle so the required class is not always object 0.
    for i in (1..classes.len()).rev() {
        let j = rng.random_range(0..=i);
        classes.swap(i, j);
    }

    let mut objects: Vec<ObjectInstance> = Vec::with_capacity(count);
    for class in classes {
        let position = loop {
            let p = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), 0.0];
            if objects.iter().all(|o| dist(o.position, p) >= config.min_separation) {
                break p;
            }
        };
        objects.push(ObjectInstance {
            class,
            position,
            grasped: false,
        });
    }

    Ok(SceneState {
        ee_pos: config.ee_start,
        gripper_closed: false,
        objects,
        texture_id,
        step_index: 0,
        horizon: config.horizon,
        episode_seed,
    })
}

/// Advance one control step. Returns the next state and whether the horizon was reached.
pub fn step(config: &EnvConfig, state: &SceneState, action: Action) -> Result<(SceneState, bool)> {
    if state.is_terminal() {
        return Err(Error::Usage("step called on a terminal state".into()));
    }
    let a = Action::sanitized(action.0).0;
    let mut next = state.clone();
    for i in 0..3 {
        next.ee_pos[i] = (state.ee_pos[i] + config.step_scale * a[i]).clamp(0.0, 1.0);
    }
    next.gripper_closed = a[3] > 0.0;

    if !next.gripper_closed {
        for o in &mut next.objects {
            o.grasped = false;
        }
    } else if next.grasped_index().is_none() {
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in next.objects.iter().enumerate() {
            let d = dist(o.position, next.ee_pos);
            // strict `<` keeps the lowest index on ties
            if d <= config.grasp_radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            next.objects[i].grasped = true;
        }
    }
    let ee = next.ee_pos;
    for o in &mut next.objects {
        if o.grasped {
            o.position = ee;
        }
    }
    next.step_index += 1;
    let done = next.is_terminal();
    Ok((next, done))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_object_scene(obj: Vec3, ee: Vec3) -> SceneState {
        SceneState {
            ee_pos: ee,
            gripper_closed: false,
            objects: vec![ObjectInstance {
                class: ObjectClass::Mug,
                position: obj,
                grasped: false,
            }],
            texture_id: 0,
            step_index: 0,
            horizon: 100,
            episode_seed: 0,
        }
    }

    #[test]
    fn finetune_mode_uses_default_texture() {
        let cfg = EnvConfig {
            mode: EnvMode::Finetune,
            ..EnvConfig::default()
        };
        for seed in 0..200 {
            assert_eq!(reset(&cfg, seed).unwrap().texture_id, 0);
        }
    }

    #[test]
    fn pretrain_default_texture_fraction() {
        let cfg = EnvConfig::default();
        let n = 10_000;
        let zeros = (0..n).filter(|&s| reset(&cfg, s).unwrap().texture_id == 0).count();
        let frac = zeros as f64 / n as f64;
        assert!((0.18..=0.22).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn reset_is_deterministic_and_well_formed() {
        let cfg = EnvConfig::default();
        for seed in 0..300 {
            let a = reset(&cfg, seed).unwrap();
            assert_eq!(a, reset(&cfg, seed).unwrap());
            assert!((1..=3).contains(&a.objects.len()));
            assert!(a.texture_id <= NUM_TEXTURES);
            assert_eq!(a.ee_pos, [0.5, 0.5, 0.4]);
            for (i, o) in a.objects.iter().enumerate() {
                for p in &a.objects[i + 1..] {
                    assert!(dist(o.position, p.position) >= 0.1);
                    assert_ne!(o.class, p.class);
                }
            }
        }
    }

    #[test]
    fn required_class_is_present() {
        let cfg = EnvConfig {
            required_class: Some(ObjectClass::Cup),
            ..EnvConfig::default()
        };
        for seed in 0..100 {
            assert!(reset(&cfg, seed).unwrap().find(ObjectClass::Cup).is_some());
        }
    }

    #[test]
    fn zero_objects_is_a_config_error() {
        let cfg = EnvConfig {
            min_objects: 0,
            max_objects: 0,
            ..EnvConfig::default()
        };
        assert!(matches!(reset(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn idle_open_action_changes_nothing_but_the_clock() {
        let cfg = EnvConfig::default();
        let s = reset(&cfg, 5).unwrap();
        let (n, done) = step(&cfg, &s, Action::idle_open()).unwrap();
        assert_eq!(n.ee_pos, s.ee_pos);
        assert!(!n.gripper_closed);
        assert!(!done);
        assert_eq!(n.step_index, 1);
    }

    #[test]
    fn workspace_clamps_at_corner() {
        let cfg = EnvConfig::default();
        let s = one_object_scene([0.5, 0.5, 0.0], [0.0, 0.0, 0.0]);
        let (n, _) = step(&cfg, &s, Action([-1.0, -1.0, -1.0, 0.3])).unwrap();
        assert_eq!(n.ee_pos, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn closing_near_object_grasps_it() {
        let cfg = EnvConfig::default();
        let s = one_object_scene([0.5, 0.5, 0.0], [0.5, 0.5, 0.05]);
        let (n, _) = step(&cfg, &s, Action([0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(n.objects[0].grasped);
        assert_eq!(n.objects[0].position, n.ee_pos);
        let (r, _) = step(&cfg, &n, Action([0.0, 0.0, 1.0, -1.0])).unwrap();
        assert!(!r.objects[0].grasped);
        assert_eq!(r.objects[0].position, n.ee_pos);
    }

    #[test]
    fn nearest_object_wins_and_ties_go_to_lowest_index() {
        let cfg = EnvConfig::default();
        let mut s = one_object_scene([0.5, 0.5, 0.0], [0.5, 0.5, 0.05]);
        s.objects.push(ObjectInstance {
            class: ObjectClass::Cup,
            position: [0.5, 0.5, 0.1],
            grasped: false,
        });
        let (n, _) = step(&cfg, &s, Action([0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(n.objects[0].grasped && !n.objects[1].grasped);

        s.objects[1].position = [0.5, 0.5, 0.09];
        let (n, _) = step(&cfg, &s, Action([0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(!n.objects[0].grasped && n.objects[1].grasped);
    }

    #[test]
    fn horizon_terminates_and_terminal_step_errors() {
        let cfg = EnvConfig {
            horizon: 3,
            ..EnvConfig::default()
        };
        let mut s = reset(&cfg, 0).unwrap();
        let mut done = false;
        for _ in 0..3 {
            let (n, d) = step(&cfg, &s, Action::idle_open()).unwrap();
            s = n;
            done = d;
        }
        assert!(done);
        assert!(matches!(step(&cfg, &s, Action::idle_open()), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn containment_and_single_grasp(seed in 0u64..1000, actions in proptest::collection::vec(proptest::array::uniform4(-3.0f64..3.0), 1..100)) {
            let cfg = EnvConfig::default();
            let mut s = reset(&cfg, seed).unwrap();
            for a in actions {
                let (n, _) = step(&cfg, &s, Action(a)).unwrap();
                let again = step(&cfg, &s, Action(a)).unwrap().0;
                prop_assert_eq!(&n, &again);
                prop_assert!(n.ee_pos.iter().all(|v| (0.0..=1.0).contains(v)));
                for o in &n.objects {
                    prop_assert!(o.position.iter().all(|v| (0.0..=1.0).contains(v)));
                }
                prop_assert!(n.objects.iter().filter(|o| o.grasped).count() <= 1);
                s = n;
            }
        }
    }
}
