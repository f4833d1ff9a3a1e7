//! Task descriptions and the success checks used for evaluation.

use serde::{Deserialize, Serialize};

use crate::arm::{forward_kinematics, ArmConfig, Point};
use crate::error::{Error, Result};
use crate::stm::{StateLayout, Trajectory};

/// Final end-effector distance below which a reach or placement succeeds (m).
pub const SUCCESS_RADIUS: f64 = 0.05;
/// Largest tolerated radius error of a circle, relative to its radius.
pub const CIRCLE_RELATIVE_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reacher,
    Circle,
    PickPlace,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reacher" => Ok(TaskKind::Reacher),
            "circle" => Ok(TaskKind::Circle),
            "pick_place" | "pick-place" => Ok(TaskKind::PickPlace),
            other => Err(Error::Invalid(format!("unknown task kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Reacher => "reacher",
            TaskKind::Circle => "circle",
            TaskKind::PickPlace => "pick_place",
        })
    }
}

/// Task metadata carried by every trajectory.
///
/// The task description ψ is the goal point (reacher, pick-and-place) or the
/// radius (circle). The task-specific input φ is the end-effector position
/// relative to the goal, or the absolute end-effector position for circles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Reacher { goal: Point },
    Circle { center: Point, radius: f64 },
    PickPlace { pick: Point, goal: Point },
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Reacher { .. } => TaskKind::Reacher,
            Task::Circle { .. } => TaskKind::Circle,
            Task::PickPlace { .. } => TaskKind::PickPlace,
        }
    }

    pub fn layout(&self, joints: usize) -> StateLayout {
        match self {
            Task::Reacher { .. } => StateLayout::new(joints, 2, 2, false),
            Task::Circle { .. } => StateLayout::new(joints, 2, 1, false),
            Task::PickPlace { .. } => StateLayout::new(joints, 2, 2, true),
        }
    }

    pub fn psi(&self) -> Vec<f64> {
        match self {
            Task::Reacher { goal } | Task::PickPlace { goal, .. } => goal.to_vec(),
            Task::Circle { radius, .. } => vec![*radius],
        }
    }

    /// Same task with its description replaced by `psi`.
    pub fn with_psi(&self, psi: &[f64]) -> Result<Task> {
        let expect = self.psi().len();
        if psi.len() != expect {
            return Err(Error::dim("task description", expect, psi.len()));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("task description"));
        }
        Ok(match self {
            Task::Reacher { .. } => Task::Reacher { goal: [psi[0], psi[1]] },
            Task::PickPlace { pick, .. } => Task::PickPlace {
                pick: *pick,
                goal: [psi[0], psi[1]],
            },
            Task::Circle { center, .. } => Task::Circle {
                center: *center,
                radius: psi[0],
            },
        })
    }

    pub fn phi(&self, ee: Point) -> Vec<f64> {
        match self {
            Task::Reacher { goal } | Task::PickPlace { goal, .. } => {
                vec![ee[0] - goal[0], ee[1] - goal[1]]
            }
            Task::Circle { .. } => ee.to_vec(),
        }
    }

    /// Checks that the goal or circle lies inside the arm's reach.
    pub fn validate(&self, arm: &ArmConfig) -> Result<()> {
        let reach = arm.reach();
        let inside = |p: &Point| p[0].hypot(p[1]) <= reach;
        let ok = match self {
            Task::Reacher { goal } => inside(goal),
            Task::PickPlace { pick, goal } => inside(pick) && inside(goal),
            Task::Circle { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Invalid(format!("circle radius must be positive, got {radius}")));
                }
                center[0].hypot(center[1]) + radius <= reach
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("task outside the arm's reach: {self:?}")))
        }
    }
}

/// Final end-effector distance to the goal, or the worst radius error along
/// a circle.
pub fn task_error(traj: &Trajectory, task: &Task, arm: &ArmConfig) -> Result<f64> {
    let path = traj.joint_path();
    match task {
        Task::Reacher { goal } | Task::PickPlace { goal, .. } => {
            let last = path.last().ok_or(Error::Empty("trajectory"))?;
            let ee = forward_kinematics(last, arm)?;
            Ok((ee[0] - goal[0]).hypot(ee[1] - goal[1]))
        }
        Task::Circle { center, radius } => {
            let mut worst: f64 = 0.0;
            for q in &path {
                let ee = forward_kinematics(q, arm)?;
                let r = (ee[0] - center[0]).hypot(ee[1] - center[1]);
                worst = worst.max((r - radius).abs());
            }
            Ok(worst)
        }
    }
}

/// Reacher / pick-and-place: final distance strictly below 5 cm.
/// Circle: radius error at most 10% of the radius at every step.
pub fn success_check(traj: &Trajectory, task: &Task, arm: &ArmConfig) -> bool {
    let Ok(err) = task_error(traj, task, arm) else {
        return false;
    };
    match task {
        Task::Circle { radius, .. } => err <= CIRCLE_RELATIVE_TOLERANCE * radius,
        _ => err < SUCCESS_RADIUS,
    }
}

/// Root-mean-square radius error of a circle trajectory.
pub fn circle_rmse(traj: &Trajectory, center: Point, radius: f64, arm: &ArmConfig) -> Result<f64> {
    let path = traj.joint_path();
    let mut acc = 0.0;
    for q in &path {
        let ee = forward_kinematics(q, arm)?;
        acc += ((ee[0] - center[0]).hypot(ee[1] - center[1]) - radius).powi(2);
    }
    Ok((acc / path.len() as f64).sqrt())
}
