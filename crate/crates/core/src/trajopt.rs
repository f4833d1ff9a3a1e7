//! Gradient-descent smoothing of a joint-space trajectory skeleton.
//!
//! For a path `q_0..q_{N-1}` with `q_0` held fixed, the cost is
//!
//! ```text
//! V = Σ_{t=1}^{N-1} ‖q_t − q̃_t‖²  +  γ Σ_{t=0}^{N-2} ‖q_{t+1} − q_t‖²  [+ β‖FK(q_{N-1}) − g‖²]
//! ```
//!
//! where `q̃` is the skeleton. The first sum keeps the shape of the
//! skeleton, the second straightens it, and the optional last term pulls the
//! final end-effector position toward a goal.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::arm::{forward_kinematics, jacobian, ArmConfig, Point};
use crate::error::{Error, Result};
use crate::stm::{State, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTerm {
    pub weight: f64,
    pub target: Point,
}

impl GoalTerm {
    pub fn new(target: Point) -> Self {
        Self { weight: 10.0, target }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothConfig {
    pub gamma: f64,
    pub step_size: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalTerm>,
    /// Hold the last point in place as well as the first.
    pub fixed_endpoints: bool,
    /// Replace the skeleton with the current path before every iteration.
    pub reanchor: bool,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            step_size: 0.05,
            iterations: 200,
            goal: None,
            fixed_endpoints: true,
            reanchor: false,
        }
    }
}

impl SmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Invalid(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if let Some(g) = &self.goal {
            if !(g.weight >= 0.0) {
                return Err(Error::Invalid("goal weight must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Largest step size for which plain gradient descent on the quadratic
    /// part is guaranteed not to increase the cost: its Hessian has
    /// eigenvalues in `[2, 2 + 8γ)`, so any `η < 2 / (2 + 8γ)` is monotone.
    pub fn stable_step_bound(&self) -> f64 {
        2.0 / (2.0 + 8.0 * self.gamma)
    }
}

fn check_shapes(traj: &[Vec<f64>], skeleton: &[Vec<f64>]) -> Result<usize> {
    if traj.len() != skeleton.len() {
        return Err(Error::dim("trajectory length", skeleton.len(), traj.len()));
    }
    let n = skeleton.first().map(Vec::len).ok_or(Error::Empty("trajectory"))?;
    for (a, b) in traj.iter().zip(skeleton) {
        if a.len() != n || b.len() != n {
            return Err(Error::dim("joint dimension", n, a.len().max(b.len())));
        }
    }
    Ok(n)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ ‖q_{t+1} − q_t‖²` over consecutive pairs.
pub fn smoothness(path: &[Vec<f64>]) -> f64 {
    path.windows(2).map(|w| sq_dist(&w[1], &w[0])).sum()
}

pub fn cost_v(traj: &[Vec<f64>], skeleton: &[Vec<f64>], cfg: &SmoothConfig, arm: &ArmConfig) -> Result<f64> {
    check_shapes(traj, skeleton)?;
    let closeness: f64 = traj.iter().zip(skeleton).skip(1).map(|(q, s)| sq_dist(q, s)).sum();
    let mut v = closeness + cfg.gamma * smoothness(traj);
    if let Some(goal) = &cfg.goal {
        let ee = forward_kinematics(traj.last().expect("checked"), arm)?;
        v += goal.weight * ((ee[0] - goal.target[0]).powi(2) + (ee[1] - goal.target[1]).powi(2));
    }
    Ok(v)
}

/// Exact gradient of [`cost_v`]. The row for `q_0` is always zero.
pub fn cost_grad(traj: &[Vec<f64>], skeleton: &[Vec<f64>], cfg: &SmoothConfig, arm: &ArmConfig) -> Result<Vec<Vec<f64>>> {
    let n = check_shapes(traj, skeleton)?;
    let len = traj.len();
    let mut grad = vec![vec![0.0; n]; len];
    for t in 1..len {
        for k in 0..n {
            let mut g = 2.0 * (traj[t][k] - skeleton[t][k]);
            g += 2.0 * cfg.gamma * (traj[t][k] - traj[t - 1][k]);
            if t + 1 < len {
                g += 2.0 * cfg.gamma * (traj[t][k] - traj[t + 1][k]);
            }
            grad[t][k] = g;
        }
    }
    if let Some(goal) = &cfg.goal {
        if len > 1 {
            let last = &traj[len - 1];
            let ee = forward_kinematics(last, arm)?;
            let j = jacobian(last, arm)?;
            let e = [ee[0] - goal.target[0], ee[1] - goal.target[1]];
            for k in 0..n {
                grad[len - 1][k] += 2.0 * goal.weight * (j.get(0, k) * e[0] + j.get(1, k) * e[1]);
            }
        }
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothResult {
    pub path: Vec<Vec<f64>>,
    /// Cost before the first step and after every step.
    pub history: Vec<f64>,
}

/// Relative per-step decrease below which smoothing counts as converged.
pub const CONVERGED_DECREASE: f64 = 1e-12;

/// Runs up to `cfg.iterations` gradient steps starting from the skeleton,
/// stopping early once a step lowers the cost by less than
/// `CONVERGED_DECREASE` relative to it. A final step that rounding pushed
/// uphill is discarded.
///
/// With re-anchoring enabled the reference path is replaced by the current
/// path before each step and the history records the cost against that
/// reference.
pub fn smooth(skeleton: &[Vec<f64>], cfg: &SmoothConfig, arm: &ArmConfig) -> Result<SmoothResult> {
    cfg.validate()?;
    if skeleton.len() < 3 {
        return Err(Error::Invalid(format!(
            "smoothing needs at least 3 points, got {}",
            skeleton.len()
        )));
    }
    let mut anchor = skeleton.to_vec();
    let mut path = skeleton.to_vec();
    let initial = cost_v(&path, &anchor, cfg, arm)?;
    let mut history = vec![initial];
    let limit = 10.0 * initial.max(1e-12);
    let last = path.len() - 1;

    for iteration in 0..cfg.iterations {
        if cfg.reanchor {
            anchor.clone_from(&path);
        }
        let grad = cost_grad(&path, &anchor, cfg, arm)?;
        let before = path.clone();
        for (t, (q, g)) in path.iter_mut().zip(&grad).enumerate() {
            if t == 0 || (cfg.fixed_endpoints && t == last) {
                continue;
            }
            q.iter_mut().zip(g).for_each(|(a, b)| *a -= cfg.step_size * b);
        }
        let prev = history[history.len() - 1];
        let v = cost_v(&path, &anchor, cfg, arm)?;
        if !v.is_finite() || v > limit {
            history.push(v);
            return Err(Error::SmoothingDiverged {
                iteration,
                cost: v,
                history,
            });
        }
        if !cfg.reanchor && prev - v <= CONVERGED_DECREASE * prev {
            if v <= prev {
                history.push(v);
            } else {
                path = before;
            }
            debug!("smoothing converged after {} steps", history.len() - 1);
            break;
        }
        history.push(v);
    }
    Ok(SmoothResult { path, history })
}

/// Replaces the joint motion of `traj` with `path`, recomputing `dq` and the
/// task-specific input while keeping task descriptions and grip values.
pub fn apply_path(traj: &Trajectory, path: &[Vec<f64>], arm: &ArmConfig) -> Result<Trajectory> {
    if path.len() != traj.len() {
        return Err(Error::dim("smoothed path length", traj.len(), path.len()));
    }
    let mut out = traj.clone();
    out.q0.clone_from(&path[0]);
    for t in 0..traj.len() {
        let mut s: State = traj.state(t);
        if t > 0 {
            s.dq = path[t].iter().zip(&path[t - 1]).map(|(a, b)| a - b).collect();
        }
        let goal_task = traj.task.with_psi(&s.psi)?;
        s.phi = goal_task.phi(forward_kinematics(&path[t], arm)?);
        out.states[t] = s.to_flat();
    }
    out.validate()?;
    Ok(out)
}
