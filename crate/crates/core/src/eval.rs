//! Seeded evaluation protocols for trained state transition models.

use serde::Serialize;

use crate::arm::{forward_kinematics, ArmConfig};
use crate::demos::{circle_start, sample_goal, sample_reacher_episode};
use crate::error::{Error, Result};
use crate::math::RngState;
use crate::stm::{rollout, GoalChange, ModelCheckpoint, RolloutOptions, Trajectory};
use crate::task::{circle_rmse, success_check, task_error, Task, CIRCLE_RELATIVE_TOLERANCE};

/// Rollout length for reaching evaluations, longer than every demonstration.
pub const REACHER_EVAL_STEPS: usize = 100;
/// Goal-change rollouts are longer than any demonstration.
pub const GOAL_CHANGE_STEPS: usize = 200;
pub const GOAL_CHANGE_AT: usize = GOAL_CHANGE_STEPS / 2;
pub const DEFAULT_EVAL_EPISODES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Episode {
    pub q0: Vec<f64>,
    pub task: Task,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub goal_changes: Vec<GoalChange>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub episode: usize,
    pub final_error: f64,
    pub success: bool,
}

/// Reaching episodes drawn from the demonstration distribution with their
/// own seed.
pub fn reacher_episodes(count: usize, seed: u64, arm: &ArmConfig) -> Result<Vec<Episode>> {
    let mut rng = RngState::new(seed);
    (0..count)
        .map(|_| {
            let (q0, task) = sample_reacher_episode(arm, &mut rng)?;
            Ok(Episode {
                q0,
                task,
                goal_changes: Vec::new(),
            })
        })
        .collect()
}

/// Reaching episodes whose goal moves to a second random goal, at least
/// 10 cm from the first, at step `at`.
pub fn goal_change_episodes(count: usize, seed: u64, at: usize, arm: &ArmConfig) -> Result<Vec<Episode>> {
    let mut rng = RngState::new(seed);
    (0..count)
        .map(|_| {
            let (q0, task) = sample_reacher_episode(arm, &mut rng)?;
            let Task::Reacher { goal } = task else { unreachable!() };
            let second = sample_goal(goal, arm, &mut rng)?;
            Ok(Episode {
                q0,
                task,
                goal_changes: vec![GoalChange {
                    step: at,
                    psi: second.to_vec(),
                }],
            })
        })
        .collect()
}

/// Deterministic rollouts of every episode, scored against the final task.
pub fn evaluate(ckpt: &ModelCheckpoint, episodes: &[Episode], steps: usize, arm: &ArmConfig) -> Result<(Vec<Trajectory>, Vec<Outcome>)> {
    let mut trajs = Vec::with_capacity(episodes.len());
    let mut outcomes = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let traj = rollout(ckpt, &ep.q0, &ep.task, steps, &ep.goal_changes, arm, RolloutOptions::default())?;
        let final_error = task_error(&traj, &traj.task, arm)?;
        outcomes.push(Outcome {
            episode: i,
            final_error,
            success: success_check(&traj, &traj.task, arm),
        });
        trajs.push(traj);
    }
    Ok((trajs, outcomes))
}

pub fn success_rate(outcomes: &[Outcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircleOutcome {
    pub radius: f64,
    pub rmse: f64,
    /// Largest radius error along the path, relative to the radius.
    pub max_relative_error: f64,
    pub success: bool,
}

/// Rolls the circle model out at each radius from the demonstrations'
/// start pose for that radius.
pub fn evaluate_circle(
    ckpt: &ModelCheckpoint,
    radii: &[f64],
    center: crate::arm::Point,
    steps: usize,
    arm: &ArmConfig,
) -> Result<(Vec<Trajectory>, Vec<CircleOutcome>)> {
    if radii.is_empty() {
        return Err(Error::Empty("circle radii"));
    }
    let mut trajs = Vec::with_capacity(radii.len());
    let mut outcomes = Vec::with_capacity(radii.len());
    for &radius in radii {
        let task = Task::Circle { center, radius };
        let q0 = circle_start(center, radius, arm)?;
        let traj = rollout(ckpt, &q0, &task, steps, &[], arm, RolloutOptions::default())?;
        let worst = task_error(&traj, &task, arm)?;
        outcomes.push(CircleOutcome {
            radius,
            rmse: circle_rmse(&traj, center, radius, arm)?,
            max_relative_error: worst / radius,
            success: worst <= CIRCLE_RELATIVE_TOLERANCE * radius,
        });
        trajs.push(traj);
    }
    Ok((trajs, outcomes))
}

/// End-effector positions along a trajectory.
pub fn ee_path(traj: &Trajectory, arm: &ArmConfig) -> Result<Vec<crate::arm::Point>> {
    traj.joint_path().iter().map(|q| forward_kinematics(q, arm)).collect()
}
