//! Expert demonstrations produced by tracking Cartesian paths with the
//! damped-least-squares IK solver.

use std::f64::consts::TAU;

use log::debug;

use crate::arm::{forward_kinematics, ik_solve, ArmConfig, Point};
use crate::error::{Error, Result};
use crate::math::RngState;
use crate::stm::{start_state, Trajectory};
use crate::task::Task;

pub const REACHER_LENGTHS: (usize, usize) = (50, 70);
pub const PICK_PLACE_LENGTHS: (usize, usize) = (166, 170);
pub const CIRCLE_CENTER: Point = [0.45, 0.35];
pub const CIRCLE_STEPS: usize = 50;
pub const PICK_LOCATION: Point = [0.6, -0.2];

/// Configuration the circle demonstrations start their IK from.
pub const CIRCLE_NOMINAL_Q: [f64; 3] = [0.0, 1.2, 0.8];

const TRACK_TOL: f64 = 1e-6;
const TRACK_ITERS: usize = 500;
const MAX_RESAMPLES: usize = 100;
/// Fraction of the remaining distance covered per step once close to the
/// goal.
const APPROACH_GAIN: f64 = 0.3;
/// Remaining fraction of the path just before the final step.
const APPROACH_RESIDUAL: f64 = 1e-3;
const MIN_REACH_DISTANCE: f64 = 0.1;

/// Ten radii evenly spaced over 5–20 cm.
pub fn default_circle_radii() -> Vec<f64> {
    (0..10).map(|k| 0.05 + 0.15 * k as f64 / 9.0).collect()
}

/// Random configuration for reaching tasks: base joint in [-0.8, 0.8] rad,
/// remaining joints bent the same way in [0.3, 1.3] rad.
pub fn sample_configuration(n: usize, rng: &mut RngState) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k == 0 {
                rng.uniform_range(-0.8, 0.8)
            } else {
                rng.uniform_range(0.3, 1.3)
            }
        })
        .collect()
}

/// Goal at least 10 cm away from `from`, drawn as the end-effector position
/// of a random configuration so it is always reachable.
pub fn sample_goal(from: Point, arm: &ArmConfig, rng: &mut RngState) -> Result<Point> {
    loop {
        let g = forward_kinematics(&sample_configuration(arm.joints(), rng), arm)?;
        if (g[0] - from[0]).hypot(g[1] - from[1]) >= MIN_REACH_DISTANCE {
            return Ok(g);
        }
    }
}

/// Random start configuration and goal for a reaching episode.
pub fn sample_reacher_episode(arm: &ArmConfig, rng: &mut RngState) -> Result<(Vec<f64>, Task)> {
    let q0 = sample_configuration(arm.joints(), rng);
    let goal = sample_goal(forward_kinematics(&q0, arm)?, arm, rng)?;
    Ok((q0, Task::Reacher { goal }))
}

/// Remaining path fractions `r_1..r_steps` for a reach: constant speed
/// `v` until the remaining fraction drops below `v / gain`, then a fixed
/// fraction of what remains per step, so the slowdown is triggered by
/// distance rather than elapsed time. `v` is found by bisection so that
/// `r_{steps-1}` equals a small residual; the last step lands on the goal.
fn approach_fractions(steps: usize) -> Vec<f64> {
    let simulate = |v: f64| {
        let mut r = 1.0;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            r -= v.min(APPROACH_GAIN * r);
            out.push(r);
        }
        out
    };
    let before_last = |v: f64| if steps < 2 { 0.0 } else { simulate(v)[steps - 2] };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if before_last(mid) > APPROACH_RESIDUAL {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out = simulate(hi);
    if let Some(last) = out.last_mut() {
        *last = 0.0;
    }
    out
}

/// Minimum-jerk progress `10τ³ − 15τ⁴ + 6τ⁵`.
fn min_jerk(tau: f64) -> f64 {
    tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

/// IK-tracks `points` starting from `q0` and returns the joint path
/// (including `q0`).
fn track_points(q0: &[f64], points: &[Point], arm: &ArmConfig) -> Result<Vec<Vec<f64>>> {
    let mut path = vec![q0.to_vec()];
    for p in points {
        let prev = path.last().expect("nonempty");
        let sol = ik_solve(*p, prev, arm, TRACK_TOL, TRACK_ITERS)?;
        path.push(sol.q);
    }
    Ok(path)
}

/// Builds a trajectory from a joint path, recomputing φ and ψ from the task.
fn to_trajectory(path: &[Vec<f64>], task: &Task, grip: Option<&[f64]>, arm: &ArmConfig) -> Result<Trajectory> {
    let layout = task.layout(arm.joints());
    let mut states = Vec::with_capacity(path.len());
    let mut s = start_state(&path[0], task, arm)?;
    if let Some(g) = grip {
        s.grip = Some(g[0]);
    }
    states.push(s.to_flat());
    for t in 1..path.len() {
        let ee = forward_kinematics(&path[t], arm)?;
        let dq: Vec<f64> = path[t].iter().zip(&path[t - 1]).map(|(a, b)| a - b).collect();
        let mut flat = dq;
        flat.extend(task.phi(ee));
        flat.extend(task.psi());
        if let Some(g) = grip {
            flat.push(g[t]);
        }
        states.push(flat);
    }
    Trajectory::new(layout, task.clone(), path[0].clone(), states)
}

/// One reaching demonstration of `len` states along the straight line from
/// the start end-effector position to the goal, at constant speed with a
/// distance-triggered slowdown near the goal.
pub fn reacher_demo(q0: &[f64], goal: Point, len: usize, arm: &ArmConfig) -> Result<Trajectory> {
    if len < 2 {
        return Err(Error::Invalid("demo length must be at least 2".into()));
    }
    let start = forward_kinematics(q0, arm)?;
    let points: Vec<Point> = approach_fractions(len - 1)
        .into_iter()
        .map(|r| [goal[0] + (start[0] - goal[0]) * r, goal[1] + (start[1] - goal[1]) * r])
        .collect();
    let path = track_points(q0, &points, arm)?;
    to_trajectory(&path, &Task::Reacher { goal }, None, arm)
}

/// Reaching demonstrations with lengths drawn uniformly from [50, 70].
pub fn gen_reacher_demos(count: usize, arm: &ArmConfig, rng: &mut RngState) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Invalid("demo count must be at least 1".into()));
    }
    arm.validate()?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut attempts = 0;
        loop {
            let (q0, task) = sample_reacher_episode(arm, rng)?;
            let Task::Reacher { goal } = task else { unreachable!() };
            let len = rng.int_inclusive(REACHER_LENGTHS.0, REACHER_LENGTHS.1);
            match reacher_demo(&q0, goal, len, arm) {
                Ok(t) => {
                    out.push(t);
                    break;
                }
                Err(e @ Error::IkNoConvergence { .. }) if attempts < MAX_RESAMPLES => {
                    debug!("reacher demo {i}: {e}; resampling");
                    attempts += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Start configuration for a circle of radius `radius` around `center`:
/// IK from the nominal pose to the circle's rightmost point.
pub fn circle_start(center: Point, radius: f64, arm: &ArmConfig) -> Result<Vec<f64>> {
    let nominal: Vec<f64> = (0..arm.joints())
        .map(|k| CIRCLE_NOMINAL_Q.get(k).copied().unwrap_or(0.5))
        .collect();
    Ok(ik_solve([center[0] + radius, center[1]], &nominal, arm, TRACK_TOL, 2000)?.q)
}

/// One counter-clockwise circle of `steps` steps (`steps + 1` states).
pub fn circle_demo(center: Point, radius: f64, steps: usize, arm: &ArmConfig) -> Result<Trajectory> {
    let task = Task::Circle { center, radius };
    task.validate(arm)?;
    if steps < 3 {
        return Err(Error::Invalid("a circle needs at least 3 steps".into()));
    }
    let q0 = circle_start(center, radius, arm)?;
    let points: Vec<Point> = (1..=steps)
        .map(|k| {
            let a = TAU * k as f64 / steps as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect();
    let path = track_points(&q0, &points, arm)?;
    to_trajectory(&path, &task, None, arm)
}

pub fn gen_circle_demos(radii: &[f64], center: Point, steps: usize, arm: &ArmConfig) -> Result<Vec<Trajectory>> {
    arm.validate()?;
    radii.iter().map(|&r| circle_demo(center, r, steps, arm)).collect()
}

/// Segment lengths (approach, grasp dwell, transfer, release dwell) for a
/// pick-and-place demo of `len` states.
fn pick_place_segments(len: usize) -> [usize; 4] {
    let steps = len - 1;
    let (approach, dwell, transfer) = (70, 5, 75);
    [approach, dwell, transfer, steps - approach - dwell - transfer]
}

/// Approach the fixed pick location, close the gripper, carry to the goal
/// and release. The grip channel is 0, then 1 while holding, then 0.
pub fn pick_place_demo(q0: &[f64], pick: Point, goal: Point, len: usize, arm: &ArmConfig) -> Result<Trajectory> {
    if !(PICK_PLACE_LENGTHS.0..=PICK_PLACE_LENGTHS.1).contains(&len) {
        return Err(Error::Invalid(format!("pick-and-place length {len} outside [166, 170]")));
    }
    let start = forward_kinematics(q0, arm)?;
    let [approach, dwell, transfer, release] = pick_place_segments(len);
    let lerp = |a: Point, b: Point, s: f64| [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s];

    let mut points = Vec::with_capacity(len - 1);
    let mut grip = vec![0.0];
    for k in 1..=approach {
        points.push(lerp(start, pick, min_jerk(k as f64 / approach as f64)));
        grip.push(0.0);
    }
    for _ in 0..dwell {
        points.push(pick);
        grip.push(1.0);
    }
    for k in 1..=transfer {
        points.push(lerp(pick, goal, min_jerk(k as f64 / transfer as f64)));
        grip.push(1.0);
    }
    for _ in 0..release {
        points.push(goal);
        grip.push(0.0);
    }
    let path = track_points(q0, &points, arm)?;
    to_trajectory(&path, &Task::PickPlace { pick, goal }, Some(&grip), arm)
}

pub fn gen_pickplace_demos(count: usize, arm: &ArmConfig, rng: &mut RngState) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Invalid("demo count must be at least 1".into()));
    }
    arm.validate()?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut attempts = 0;
        loop {
            let q0 = sample_configuration(arm.joints(), rng);
            let goal = sample_goal(PICK_LOCATION, arm, rng)?;
            let len = rng.int_inclusive(PICK_PLACE_LENGTHS.0, PICK_PLACE_LENGTHS.1);
            match pick_place_demo(&q0, PICK_LOCATION, goal, len, arm) {
                Ok(t) => {
                    out.push(t);
                    break;
                }
                Err(e @ Error::IkNoConvergence { .. }) if attempts < MAX_RESAMPLES => {
                    debug!("pick-and-place demo {i}: {e}; resampling");
                    attempts += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{success_check, task_error};

    #[test]
    fn reacher_demos_contract() {
        let arm = ArmConfig::default();
        let mut rng = RngState::new(5);
        let demos = gen_reacher_demos(45, &arm, &mut rng).unwrap();
        assert_eq!(demos.len(), 45);
        for d in &demos {
            assert!((50..=70).contains(&d.len()), "length {}", d.len());
            assert!(task_error(d, &d.task, &arm).unwrap() < 1e-3);
            assert!(success_check(d, &d.task, &arm));
            let path = d.joint_path();
            let total: Vec<f64> = (0..3).map(|k| (1..d.len()).map(|t| d.dq(t)[k]).sum()).collect();
            for k in 0..3 {
                assert!((total[k] - (path[d.len() - 1][k] - path[0][k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let arm = ArmConfig::default();
        let a = gen_reacher_demos(5, &arm, &mut RngState::new(9)).unwrap();
        let b = gen_reacher_demos(5, &arm, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
        let c = gen_pickplace_demos(2, &arm, &mut RngState::new(9)).unwrap();
        let d = gen_pickplace_demos(2, &arm, &mut RngState::new(9)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn circle_demos_contract() {
        let arm = ArmConfig::default();
        let radii = default_circle_radii();
        assert_eq!(radii.len(), 10);
        assert!((radii[0] - 0.05).abs() < 1e-15 && (radii[9] - 0.20).abs() < 1e-15);
        let demos = gen_circle_demos(&radii, CIRCLE_CENTER, CIRCLE_STEPS, &arm).unwrap();
        for (d, r) in demos.iter().zip(&radii) {
            assert_eq!(d.len(), CIRCLE_STEPS + 1);
            assert!(task_error(d, &d.task, &arm).unwrap() < 1e-3);
            assert_eq!(d.state(3).psi, vec![*r]);
        }
        assert!(circle_demo(CIRCLE_CENTER, 0.0, CIRCLE_STEPS, &arm).is_err());
        assert!(circle_demo([0.9, 0.0], 0.2, CIRCLE_STEPS, &arm).is_err());
    }

    #[test]
    fn pick_place_demos_contract() {
        let arm = ArmConfig::default();
        let demos = gen_pickplace_demos(6, &arm, &mut RngState::new(2)).unwrap();
        for d in &demos {
            assert!((166..=170).contains(&d.len()));
            assert!(task_error(d, &d.task, &arm).unwrap() < 1e-3);
            let grip: Vec<f64> = (0..d.len()).map(|t| d.grip(t).unwrap()).collect();
            let transitions = grip.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(transitions, 2);
            assert_eq!(grip[0], 0.0);
            assert_eq!(*grip.last().unwrap(), 0.0);
            assert!(grip.contains(&1.0));
        }
    }
}
