use log::{debug, info};

use crate::arm::{forward_kinematics, ArmConfig};
use crate::error::{Error, Result};
use crate::math::{clip_global_norm, AdamConfig, AdamState, Params, RngState};
use crate::task::Task;

use super::checkpoint::ModelCheckpoint;
use super::model::{conditioning_mask, Conditioning, StmConfig, StmModel};
use super::state::{Normalization, State, StateLayout, Trajectory};

/// Integrates a predicted `dq` into `running_q` and assembles the state the
/// model would observe there: φ from forward kinematics, ψ from the task.
///
/// `pred` holds the raw (denormalized) predicted dimensions: `dq`, then the
/// grip value when the layout has one.
pub fn recompute_feedback(
    pred: &[f64],
    running_q: &mut [f64],
    task: &Task,
    arm: &ArmConfig,
    layout: StateLayout,
) -> Result<State> {
    if pred.len() != layout.predicted() {
        return Err(Error::dim("predicted state", layout.predicted(), pred.len()));
    }
    if running_q.len() != layout.dq {
        return Err(Error::dim("running joint angles", layout.dq, running_q.len()));
    }
    let dq = &pred[..layout.dq];
    running_q.iter_mut().zip(dq).for_each(|(q, d)| *q += d);
    let ee = forward_kinematics(running_q, arm)?;
    Ok(State {
        dq: dq.to_vec(),
        phi: task.phi(ee),
        psi: task.psi(),
        grip: layout.grip.then(|| pred[layout.dq].clamp(0.0, 1.0)),
    })
}

/// Per-iteration record of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub trajectory: usize,
    pub loss: f64,
}

pub fn train(dataset: &[Trajectory], cfg: &StmConfig, arm: &ArmConfig) -> Result<ModelCheckpoint> {
    train_with_observer(dataset, cfg, arm, &mut |_| {})
}

/// Trains an STM on expert trajectories.
///
/// Each iteration picks one trajectory uniformly at random and unrolls the
/// network over it. At step `t` the input is the expert state or, on
/// self-fed steps, the state rebuilt from the model's previous prediction.
/// The target is always the expert's next state. Step 0 always uses the
/// expert start state because no prediction exists yet.
pub fn train_with_observer(
    dataset: &[Trajectory],
    cfg: &StmConfig,
    arm: &ArmConfig,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    arm.validate()?;
    let first = dataset.first().ok_or(Error::Empty("training dataset"))?;
    let layout = first.layout;
    for traj in dataset {
        if traj.layout != layout {
            return Err(Error::Invalid("dataset mixes state layouts".into()));
        }
        traj.validate()?;
    }
    if layout.dq != arm.joints() {
        return Err(Error::dim("dataset joints", arm.joints(), layout.dq));
    }

    let norm = Normalization::fit(dataset, cfg.normalize)?;
    let predicted = layout.predicted_indices();
    let mut rng = RngState::new(cfg.seed);
    let mut model = StmModel::init(layout.width(), predicted.len(), cfg, &mut rng);
    let mut params = model.to_flat();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut grads = model.zeros_like();
    let mut flat_grads = vec![0.0; params.len()];
    let mut loss_curve = Vec::with_capacity(cfg.iterations);

    // Expert joint paths and normalized targets are fixed; compute once.
    let expert_paths: Vec<Vec<Vec<f64>>> = dataset.iter().map(Trajectory::joint_path).collect();

    for iteration in 0..cfg.iterations {
        let index = rng.index(dataset.len());
        let traj = &dataset[index];
        grads.zero();
        let loss = unroll_loss(&model, traj, &expert_paths[index], &norm, &predicted, cfg, arm, &mut rng, &mut grads)
            .map_err(|e| match e {
                Error::NonFinite { context } => Error::TrainingDiverged {
                    iteration,
                    detail: format!("trajectory {index}: {context}"),
                },
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration,
                detail: format!("trajectory {index}: loss {loss}"),
            });
        }
        grads.write_flat(&mut flat_grads);
        adam.config.learning_rate = cfg.learning_rate_at(iteration);
        let norm_before = clip_global_norm(&mut flat_grads, cfg.clip_norm);
        adam.step(&mut params, &flat_grads).map_err(|e| Error::TrainingDiverged {
            iteration,
            detail: format!("trajectory {index}: {e} (gradient norm {norm_before})"),
        })?;
        model.copy_from_flat(&params);
        loss_curve.push(loss);
        let record = LossRecord {
            iteration,
            trajectory: index,
            loss,
        };
        observer(&record);
        if iteration % 500 == 0 || iteration + 1 == cfg.iterations {
            info!("iteration {iteration}: loss {loss:.5} (|g| {norm_before:.3})");
        } else {
            debug!("iteration {iteration}: loss {loss:.5}");
        }
    }

    Ok(ModelCheckpoint::new(arm.clone(), cfg.clone(), layout, norm, model, loss_curve))
}

/// Mean per-step loss over one trajectory; gradients of that mean are
/// accumulated into `grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn unroll_loss(
    model: &StmModel,
    traj: &Trajectory,
    expert_q: &[Vec<f64>],
    norm: &Normalization,
    predicted: &[usize],
    cfg: &StmConfig,
    arm: &ArmConfig,
    rng: &mut RngState,
    grads: &mut StmModel,
) -> Result<f64> {
    let layout = traj.layout;
    let steps = traj.len() - 1;
    let mut state = model.zero_state();
    let mut caches = Vec::with_capacity(steps);
    let mut step_grads = Vec::with_capacity(steps);
    let mut total = 0.0;
    let mut running_q = traj.q0.clone();
    let mut last_pred: Option<Vec<f64>> = None;

    for t in 0..steps {
        let raw_input = match (conditioning_mask(t, cfg.schedule), &last_pred) {
            (Conditioning::SelfFed, Some(pred)) => {
                recompute_feedback(pred, &mut running_q, &traj.task, arm, layout)?.to_flat()
            }
            _ => {
                running_q.clone_from(&expert_q[t]);
                traj.states[t].clone()
            }
        };
        let x = norm.encode(&raw_input)?;
        let (out, cache) = model.step(&x, &mut state)?;
        let target_raw: Vec<f64> = predicted.iter().map(|&k| traj.states[t + 1][k]).collect();
        let target = norm.encode_at(&target_raw, predicted);
        let (loss, dh) = model.head_backward(&out, &target, grads)?;
        if !loss.is_finite() {
            return Err(Error::non_finite(format!("loss at step {t}")));
        }
        total += loss;
        caches.push(cache);
        step_grads.push(dh);
        let pred = out.predict(rng, cfg.self_feed);
        last_pred = Some(norm.decode_at(&pred, predicted));
    }

    model.lstm.backward_through_time(&step_grads, &caches, &mut grads.lstm)?;
    let scale = 1.0 / steps as f64;
    grads.visit_mut(&mut |s| s.iter_mut().for_each(|g| *g *= scale));
    Ok(total * scale)
}
