use crate::arm::{forward_kinematics, ArmConfig};
use crate::error::{Error, Result};
use crate::math::RngState;
use crate::mdn::SampleMode;
use crate::task::Task;

use super::checkpoint::ModelCheckpoint;
use super::state::{GoalChange, State, Trajectory};
use super::train::recompute_feedback;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RolloutOptions {
    pub mode: SampleMode,
    /// Seed for stochastic draws; unused in deterministic mode.
    pub seed: u64,
}

/// State observed at rest in configuration `q`.
pub fn start_state(q: &[f64], task: &Task, arm: &ArmConfig) -> Result<State> {
    let ee = forward_kinematics(q, arm)?;
    let grip = (task.kind() == crate::task::TaskKind::PickPlace).then_some(0.0);
    Ok(State {
        dq: vec![0.0; q.len()],
        phi: task.phi(ee),
        psi: task.psi(),
        grip,
    })
}

/// Unrolls the model for `steps` predictions from `q0`, feeding each
/// prediction back as the next input. At every scheduled step the task
/// description is replaced before that step's state is encoded.
pub fn rollout(
    ckpt: &ModelCheckpoint,
    q0: &[f64],
    task: &Task,
    steps: usize,
    goal_schedule: &[GoalChange],
    arm: &ArmConfig,
    opts: RolloutOptions,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Invalid("rollout needs at least one step".into()));
    }
    for pair in goal_schedule.windows(2) {
        if pair[1].step <= pair[0].step {
            return Err(Error::Invalid("goal schedule steps must be strictly increasing".into()));
        }
    }
    if let Some(last) = goal_schedule.last() {
        if last.step >= steps {
            return Err(Error::Invalid(format!(
                "goal change at step {} is beyond the rollout length {steps}",
                last.step
            )));
        }
    }
    let layout = ckpt.layout;
    if task.layout(arm.joints()) != layout {
        return Err(Error::Invalid(format!(
            "task {} does not match the checkpoint's state layout",
            task.kind()
        )));
    }

    let model = &ckpt.model;
    let norm = &ckpt.normalization;
    let predicted = layout.predicted_indices();
    let mut rng = RngState::new(opts.seed);
    let mut task = task.clone();
    let mut running_q = q0.to_vec();
    let mut lstm_state = model.zero_state();
    let mut schedule = goal_schedule.iter().peekable();

    let mut states = Vec::with_capacity(steps + 1);
    states.push(start_state(q0, &task, arm)?.to_flat());
    for t in 0..steps {
        if let Some(change) = schedule.next_if(|c| c.step == t) {
            task = task.with_psi(&change.psi)?;
            let ee = forward_kinematics(&running_q, arm)?;
            let mut s = State::from_flat(layout, &states[t])?;
            s.phi = task.phi(ee);
            s.psi = task.psi();
            states[t] = s.to_flat();
        }
        let x = norm.encode(&states[t])?;
        let (out, _) = model.step(&x, &mut lstm_state)?;
        let pred = norm.decode_at(&out.predict(&mut rng, opts.mode), &predicted);
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step: t });
        }
        let next = recompute_feedback(&pred, &mut running_q, &task, arm, layout)?;
        states.push(next.to_flat());
    }

    let mut traj = Trajectory::new(layout, task, q0.to_vec(), states)?;
    traj.goal_changes = goal_schedule.to_vec();
    Ok(traj)
}
