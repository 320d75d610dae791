use super::task::TaskKind;
use super::{dist, Action, EnvConfig, SceneState, TaskSpec, Vec3};

const ALIGN_TOL: f64 = 0.01;
const HOVER: f64 = 0.1;

fn toward(from: Vec3, to: Vec3, scale: f64, gripper: f64) -> Action {
    let d = [0, 1, 2].map(|i| ((to[i] - from[i]) / scale).clamp(-1.0, 1.0));
    Action([d[0], d[1], d[2], gripper])
}

fn horizontal(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Stateless waypoint controller: hover above the target, descend, close,
/// lift, and for placing carry to the zone and open.
///
/// If the target class is absent the expert idles with the gripper open.
pub fn expert_policy(config: &EnvConfig, state: &SceneState, task: &TaskSpec) -> Action {
    let Some(ti) = state.objects.iter().position(|o| o.class == task.target_class) else {
        return Action::idle_open();
    };
    let obj = state.objects[ti];
    let ee = state.ee_pos;
    let s = config.step_scale;

    if task.kind == TaskKind::Reach {
        return toward(ee, obj.position, s, -1.0);
    }

    // Holding the wrong object: let go first.
    if let Some(g) = state.grasped_index() {
        if g != ti {
            return Action([0.0, 0.0, 0.0, -1.0]);
        }
    }

    if obj.grasped {
        let lift = [obj.position[0], obj.position[1], (config.lift_height + 0.05).min(1.0)];
        return match (task.kind, task.target_zone) {
            (TaskKind::PlaceOnTarget, Some(zone)) => {
                if dist(obj.position, zone) < 0.5 * task.success_threshold {
                    Action([0.0, 0.0, 0.0, -1.0])
                } else if horizontal(ee, zone) > ALIGN_TOL {
                    let carry_z = ee[2].max(zone[2]).max(config.lift_height);
                    toward(ee, [zone[0], zone[1], carry_z], s, 1.0)
                } else {
                    toward(ee, zone, s, 1.0)
                }
            }
            _ => toward(ee, lift, s, 1.0),
        };
    }

    if let (TaskKind::PlaceOnTarget, Some(zone)) = (task.kind, task.target_zone) {
        if dist(obj.position, zone) < task.success_threshold {
            return Action([0.0, 0.0, 0.0, -1.0]);
        }
    }

    if horizontal(ee, obj.position) > ALIGN_TOL {
        let hover = [obj.position[0], obj.position[1], (obj.position[2] + HOVER).min(1.0)];
        return toward(ee, hover, s, -1.0);
    }
    if dist(ee, obj.position) < 0.5 * config.grasp_radius {
        return Action([0.0, 0.0, 0.0, 1.0]);
    }
    toward(ee, obj.position, s, -1.0)
}
