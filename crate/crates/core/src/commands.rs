//! The pipeline stages behind each CLI subcommand, callable as library
//! functions. Every stage reads and writes files, writes its resolved
//! configuration beside its primary output and returns a small report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::arm::{forward_kinematics, Point};
use crate::config::ExperimentConfig;
use crate::demos::{
    circle_demo, circle_start, gen_circle_demos, gen_pickplace_demos, gen_reacher_demos, sample_configuration,
    sample_goal, CIRCLE_NOMINAL_Q, PICK_PLACE_LENGTHS,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, evaluate_circle, goal_change_episodes, reacher_episodes, success_rate, CircleOutcome, Episode, Outcome,
    GOAL_CHANGE_AT, GOAL_CHANGE_STEPS, REACHER_EVAL_STEPS,
};
use crate::idm::{
    collect_transitions, load_idm, median, oracle_relative_errors, save_idm, track, train_idm, write_track_csv,
    Controller,
};
use crate::math::RngState;
use crate::mdn::SampleMode;
use crate::stm::{
    load_checkpoint, read_dataset, rollout, save_checkpoint, train_with_observer, write_dataset, GoalChange,
    LossRecord, ModelCheckpoint, RolloutOptions, StateLayout, Trajectory, Variant,
};
use crate::task::{success_check, task_error, Task, TaskKind};
use crate::trajopt::{apply_path, smooth};

/// Seed stream for evaluation episodes, kept apart from demonstration
/// sampling so evaluation never replays training episodes.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0000_E7A1
}

/// Seed stream for held-out IDM transitions.
pub fn held_out_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0000_0D1D
}

/// Task kind implied by a state layout.
pub fn task_kind_of(layout: StateLayout) -> TaskKind {
    if layout.grip {
        TaskKind::PickPlace
    } else if layout.psi == 1 {
        TaskKind::Circle
    } else {
        TaskKind::Reacher
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Parses `STEP:V1,V2,...` into a goal change.
pub fn parse_goal_change(text: &str) -> Result<GoalChange> {
    let bad = || Error::Invalid(format!("malformed goal change `{text}`; expected STEP:X,Y"));
    let (step, values) = text.split_once(':').ok_or_else(bad)?;
    let step = step.trim().parse().map_err(|_| bad())?;
    let psi = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    if psi.is_empty() || psi.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(GoalChange { step, psi })
}

/// Parses a comma-separated list of numbers.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("malformed number list `{text}`")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl DatasetSummary {
    fn of(dataset: &[Trajectory]) -> Self {
        Self {
            count: dataset.len(),
            min_len: dataset.iter().map(Trajectory::len).min().unwrap_or(0),
            max_len: dataset.iter().map(Trajectory::len).max().unwrap_or(0),
        }
    }
}

/// Generates demonstrations for `cfg.task` and writes them to `out`.
pub fn gen_demos(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetSummary> {
    let arm = &cfg.arm;
    let count = cfg.task.demo_count();
    let mut rng = RngState::new(cfg.seed);
    let demos = match cfg.task.kind {
        TaskKind::Reacher => gen_reacher_demos(count, arm, &mut rng)?,
        TaskKind::PickPlace => gen_pickplace_demos(count, arm, &mut rng)?,
        TaskKind::Circle => {
            if count > cfg.task.circle_radii.len() {
                return Err(Error::Invalid(format!(
                    "{count} circle demos requested but only {} radii configured",
                    cfg.task.circle_radii.len()
                )));
            }
            let radii = &cfg.task.circle_radii[..count];
            gen_circle_demos(radii, cfg.task.circle_center, cfg.task.circle_steps, arm)?
        }
    };
    write_dataset(out, &demos)?;
    cfg.write_beside(out)?;
    let summary = DatasetSummary::of(&demos);
    info!("wrote {} demos ({}..={} states) to {}", summary.count, summary.min_len, summary.max_len, out.display());
    Ok(summary)
}

/// Trains an STM on the dataset at `dataset`; writes the checkpoint to
/// `out` and the per-iteration loss CSV (`iteration,trajectory,loss`) to
/// `loss_csv`.
pub fn train_stm(cfg: &ExperimentConfig, dataset: &Path, variant: Variant, out: &Path, loss_csv: &Path) -> Result<ModelCheckpoint> {
    let demos = read_dataset(dataset)?;
    let mut stm = cfg.stm_config();
    variant.apply(&mut stm);
    info!("training {} on {} trajectories", variant.name(), demos.len());
    let mut records: Vec<LossRecord> = Vec::with_capacity(stm.iterations);
    let ckpt = train_with_observer(&demos, &stm, &cfg.arm, &mut |r| records.push(r.clone()))?;
    save_checkpoint(&ckpt, out)?;
    let tmp = sibling(loss_csv, ".partial");
    {
        let mut w = csv_writer(&tmp)?;
        w.write_record(["iteration", "trajectory", "loss"])?;
        for r in &records {
            w.write_record([r.iteration.to_string(), r.trajectory.to_string(), r.loss.to_string()])?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, loss_csv)?;
    let mut resolved = cfg.clone();
    resolved.schedule = Some(stm.schedule);
    resolved.stm.head = Some(stm.head);
    resolved.write_beside(out)?;
    Ok(ckpt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRequest {
    /// Goal point (reacher, pick-and-place) or radius (circle).
    pub psi: Option<Vec<f64>>,
    pub q0: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub goal_changes: Vec<GoalChange>,
    pub stochastic: bool,
}

/// Default start configuration and task for a checkpoint's task kind.
fn default_task(cfg: &ExperimentConfig, kind: TaskKind, psi: Option<&[f64]>) -> Result<Task> {
    let task = match kind {
        TaskKind::Reacher => Task::Reacher { goal: [0.4, 0.5] },
        TaskKind::Circle => Task::Circle {
            center: cfg.task.circle_center,
            radius: 0.1,
        },
        TaskKind::PickPlace => Task::PickPlace {
            pick: cfg.task.pick,
            goal: [0.3, 0.6],
        },
    };
    match psi {
        Some(p) => task.with_psi(p),
        None => Ok(task),
    }
}

fn default_steps(kind: TaskKind, cfg: &ExperimentConfig) -> usize {
    match kind {
        TaskKind::Reacher => REACHER_EVAL_STEPS,
        TaskKind::Circle => cfg.task.circle_steps,
        TaskKind::PickPlace => PICK_PLACE_LENGTHS.1 - 1,
    }
}

/// Rolls a checkpoint out; writes the trajectory as a one-line dataset to
/// `out` and the end-effector path CSV (`step,x,y,grip`) to `ee_csv`.
pub fn rollout_cmd(cfg: &ExperimentConfig, checkpoint: &Path, req: &RolloutRequest, out: &Path, ee_csv: &Path) -> Result<Trajectory> {
    let ckpt = load_checkpoint(checkpoint)?;
    let arm = &ckpt.arm;
    let kind = task_kind_of(ckpt.layout);
    let task = default_task(cfg, kind, req.psi.as_deref())?;
    let q0 = match (&req.q0, &task) {
        (Some(q), _) => q.clone(),
        (None, Task::Circle { center, radius }) => circle_start(*center, *radius, arm)?,
        (None, _) => CIRCLE_NOMINAL_Q.to_vec(),
    };
    let steps = req.steps.unwrap_or_else(|| default_steps(kind, cfg));
    let opts = RolloutOptions {
        mode: if req.stochastic { SampleMode::Stochastic } else { SampleMode::Deterministic },
        seed: cfg.seed,
    };
    let traj = rollout(&ckpt, &q0, &task, steps, &req.goal_changes, arm, opts)?;
    write_dataset(out, std::slice::from_ref(&traj))?;
    write_ee_csv(&traj, arm, ee_csv)?;
    cfg.write_beside(out)?;
    Ok(traj)
}

/// End-effector path CSV: `step,x,y,grip` (grip empty when absent).
pub fn write_ee_csv(traj: &Trajectory, arm: &crate::arm::ArmConfig, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "x", "y", "grip"])?;
    for (t, q) in traj.joint_path().iter().enumerate() {
        let ee = forward_kinematics(q, arm)?;
        let grip = traj.grip(t).map(|g| g.to_string()).unwrap_or_default();
        w.write_record([t.to_string(), ee[0].to_string(), ee[1].to_string(), grip])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothReport {
    pub trajectories: usize,
    pub smoothness_before: f64,
    pub smoothness_after: f64,
}

/// Smooths every trajectory in `input`; writes the smoothed dataset to
/// `out` and the cost history CSV (`trajectory,iteration,cost`) to
/// `cost_csv`.
pub fn smooth_cmd(cfg: &ExperimentConfig, input: &Path, out: &Path, cost_csv: &Path) -> Result<SmoothReport> {
    let trajs = read_dataset(input)?;
    let mut smoothed = Vec::with_capacity(trajs.len());
    let mut w = csv_writer(cost_csv)?;
    w.write_record(["trajectory", "iteration", "cost"])?;
    let (mut before, mut after) = (0.0, 0.0);
    for (i, traj) in trajs.iter().enumerate() {
        let path = traj.joint_path();
        let result = smooth(&path, &cfg.trajopt, &cfg.arm)?;
        for (k, c) in result.history.iter().enumerate() {
            w.write_record([i.to_string(), k.to_string(), c.to_string()])?;
        }
        before += crate::trajopt::smoothness(&path);
        after += crate::trajopt::smoothness(&result.path);
        smoothed.push(apply_path(traj, &result.path, &cfg.arm)?);
    }
    w.flush()?;
    write_dataset(out, &smoothed)?;
    cfg.write_beside(out)?;
    Ok(SmoothReport {
        trajectories: trajs.len(),
        smoothness_before: before,
        smoothness_after: after,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRequest {
    pub rollouts: usize,
    pub seed: u64,
    pub goal_change: bool,
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub rollouts: usize,
    pub success_rate: f64,
}

/// Radii used to evaluate circle models: the configured ones and the
/// midpoints between neighbours.
pub fn circle_eval_radii(radii: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * radii.len());
    for (i, r) in radii.iter().enumerate() {
        out.push(*r);
        if let Some(next) = radii.get(i + 1) {
            out.push(0.5 * (r + next));
        }
    }
    out
}

/// Pick-and-place episodes: random start and a goal at least 10 cm from the
/// pick location.
pub fn pick_place_episodes(count: usize, seed: u64, cfg: &ExperimentConfig) -> Result<Vec<Episode>> {
    let mut rng = RngState::new(seed);
    (0..count)
        .map(|_| {
            let q0 = sample_configuration(cfg.arm.joints(), &mut rng);
            let goal = sample_goal(cfg.task.pick, &cfg.arm, &mut rng)?;
            Ok(Episode {
                q0,
                task: Task::PickPlace { pick: cfg.task.pick, goal },
                goal_changes: Vec::new(),
            })
        })
        .collect()
}

/// Seeded evaluation of a checkpoint. Writes the per-rollout detail CSV:
/// `episode,final_error,success` for reaching tasks and
/// `radius,rmse,max_relative_error,success` for circles.
pub fn eval_cmd(cfg: &ExperimentConfig, checkpoint: &Path, req: &EvalRequest, detail_csv: &Path) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let arm = &ckpt.arm;
    let kind = task_kind_of(ckpt.layout);
    let report = match kind {
        TaskKind::Circle => {
            let radii = circle_eval_radii(&cfg.task.circle_radii);
            let steps = req.steps.unwrap_or(cfg.task.circle_steps);
            let (_, outcomes) = evaluate_circle(&ckpt, &radii, cfg.task.circle_center, steps, arm)?;
            write_circle_csv(&outcomes, detail_csv)?;
            EvalReport {
                task: kind,
                rollouts: outcomes.len(),
                success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64,
            }
        }
        _ => {
            let (episodes, default) = match (kind, req.goal_change) {
                (TaskKind::PickPlace, _) => (pick_place_episodes(req.rollouts, req.seed, cfg)?, default_steps(kind, cfg)),
                (_, true) => (
                    goal_change_episodes(req.rollouts, req.seed, GOAL_CHANGE_AT, arm)?,
                    GOAL_CHANGE_STEPS,
                ),
                (_, false) => (reacher_episodes(req.rollouts, req.seed, arm)?, REACHER_EVAL_STEPS),
            };
            let (_, outcomes) = evaluate(&ckpt, &episodes, req.steps.unwrap_or(default), arm)?;
            write_outcome_csv(&outcomes, detail_csv)?;
            EvalReport {
                task: kind,
                rollouts: outcomes.len(),
                success_rate: success_rate(&outcomes),
            }
        }
    };
    cfg.write_beside(detail_csv)?;
    Ok(report)
}

/// Scores the trajectories of a dataset directly, e.g. expert demos.
pub fn eval_dataset(cfg: &ExperimentConfig, dataset: &Path, detail_csv: &Path) -> Result<EvalReport> {
    let trajs = read_dataset(dataset)?;
    let first = trajs.first().ok_or(Error::Empty("dataset"))?;
    let outcomes = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(Outcome {
                episode: i,
                final_error: task_error(t, &t.task, &cfg.arm)?,
                success: success_check(t, &t.task, &cfg.arm),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_outcome_csv(&outcomes, detail_csv)?;
    cfg.write_beside(detail_csv)?;
    Ok(EvalReport {
        task: first.task.kind(),
        rollouts: outcomes.len(),
        success_rate: success_rate(&outcomes),
    })
}

fn write_outcome_csv(outcomes: &[Outcome], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["episode", "final_error", "success"])?;
    for o in outcomes {
        w.write_record([o.episode.to_string(), o.final_error.to_string(), o.success.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_circle_csv(outcomes: &[CircleOutcome], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["radius", "rmse", "max_relative_error", "success"])?;
    for o in outcomes {
        w.write_record([
            o.radius.to_string(),
            o.rmse.to_string(),
            o.max_relative_error.to_string(),
            o.success.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdmReport {
    pub transitions: usize,
    pub final_loss: f64,
    pub held_out_median_relative_error: f64,
}

/// Collects exploration transitions, trains the IDM and writes the
/// checkpoint to `out` and the loss CSV (`iteration,loss`) to `loss_csv`.
pub fn train_idm_cmd(cfg: &ExperimentConfig, out: &Path, loss_csv: &Path) -> Result<IdmReport> {
    let idm_cfg = cfg.idm_config();
    let data = collect_transitions(&cfg.arm, idm_cfg.exploration(), idm_cfg.transitions, idm_cfg.history, cfg.seed)?;
    let ckpt = train_idm(&data, &idm_cfg, &cfg.arm)?;
    save_idm(&ckpt, out)?;
    let mut w = csv_writer(loss_csv)?;
    w.write_record(["iteration", "loss"])?;
    for (i, l) in ckpt.loss_curve.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    let held_out = collect_transitions(&cfg.arm, idm_cfg.exploration(), 1000, idm_cfg.history, held_out_seed(cfg.seed))?;
    let errors = oracle_relative_errors(&ckpt, &held_out)?;
    cfg.write_beside(out)?;
    Ok(IdmReport {
        transitions: data.len(),
        final_loss: ckpt.loss_curve.last().copied().unwrap_or(f64::NAN),
        held_out_median_relative_error: median(&errors).unwrap_or(f64::NAN),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackRequest {
    /// `None` substitutes the analytic inverse dynamics.
    pub idm: Option<PathBuf>,
    pub goal: Point,
    pub q0: Option<Vec<f64>>,
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackReport {
    pub steps: usize,
    pub max_joint_error: f64,
    pub final_ee_error: f64,
}

/// Rolls a reacher STM out and tracks it with torque control; writes the
/// per-step CSV (`step,q_des_*,q_act_*,tau_*,error`) to `out_csv`.
pub fn track_cmd(cfg: &ExperimentConfig, stm: &Path, req: &TrackRequest, out_csv: &Path) -> Result<TrackReport> {
    let stm = load_checkpoint(stm)?;
    let idm = req.idm.as_deref().map(load_idm).transpose()?;
    let (controller, substeps) = match &idm {
        Some(m) => (Controller::Learned(m), m.config.substeps),
        None => (Controller::Oracle, cfg.idm.substeps),
    };
    let task = Task::Reacher { goal: req.goal };
    let q0 = req.q0.clone().unwrap_or_else(|| CIRCLE_NOMINAL_Q.to_vec());
    let steps = req.steps.unwrap_or(REACHER_EVAL_STEPS);
    let result = track(&stm, controller, &cfg.arm, &task, &q0, steps, substeps)?;
    write_track_csv(&result.records, std::fs::File::create(out_csv)?)?;
    cfg.write_beside(out_csv)?;
    Ok(TrackReport {
        steps,
        max_joint_error: result.records.iter().map(|r| r.error).fold(0.0, f64::max),
        final_ee_error: task_error(&result.executed, &task, &cfg.arm)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub trajectories: usize,
    pub steps: usize,
    pub stm_seconds: f64,
    pub ik_seconds: f64,
    /// IK time over STM time; above 1 means the STM is faster.
    pub speedup: f64,
}

/// Times circle synthesis with the STM against IK tracking of the same
/// circle, per trajectory, taking the median over `repeats` passes.
pub fn bench_cmd(cfg: &ExperimentConfig, checkpoint: &Path, repeats: usize) -> Result<BenchReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    if task_kind_of(ckpt.layout) != TaskKind::Circle {
        return Err(Error::Invalid("bench expects a circle checkpoint".into()));
    }
    let arm = &ckpt.arm;
    let center = cfg.task.circle_center;
    let steps = cfg.task.circle_steps;
    let radii = &cfg.task.circle_radii;
    if radii.is_empty() || repeats == 0 {
        return Err(Error::Invalid("bench needs at least one radius and one repeat".into()));
    }
    let starts = radii
        .iter()
        .map(|&r| circle_start(center, r, arm))
        .collect::<Result<Vec<_>>>()?;
    let mut stm_times = Vec::with_capacity(repeats);
    let mut ik_times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        for (r, q0) in radii.iter().zip(&starts) {
            let task = Task::Circle { center, radius: *r };
            std::hint::black_box(rollout(&ckpt, q0, &task, steps, &[], arm, RolloutOptions::default())?);
        }
        stm_times.push(t.elapsed().as_secs_f64() / radii.len() as f64);
        let t = Instant::now();
        for r in radii {
            std::hint::black_box(circle_demo(center, *r, steps, arm)?);
        }
        ik_times.push(t.elapsed().as_secs_f64() / radii.len() as f64);
    }
    let stm_seconds = median(&stm_times).expect("repeats > 0");
    let ik_seconds = median(&ik_times).expect("repeats > 0");
    Ok(BenchReport {
        trajectories: radii.len(),
        steps,
        stm_seconds,
        ik_seconds,
        speedup: ik_seconds / stm_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_change_parsing() {
        assert_eq!(
            parse_goal_change("30:0.2,0.6").unwrap(),
            GoalChange {
                step: 30,
                psi: vec![0.2, 0.6]
            }
        );
        assert_eq!(parse_goal_change(" 5 :0.1").unwrap().psi, vec![0.1]);
        for bad in ["30", "x:0.2,0.6", "30:", "30:a,b", "-1:0.1,0.2", "3:nan,1"] {
            assert!(parse_goal_change(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn circle_radii_include_midpoints() {
        let got = circle_eval_radii(&[0.1, 0.2, 0.4]);
        let want = [0.1, 0.15, 0.2, 0.3, 0.4];
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            approx::assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn layouts_map_to_tasks() {
        let arm = crate::arm::ArmConfig::default();
        for task in [
            Task::Reacher { goal: [0.1, 0.2] },
            Task::Circle { center: [0.1, 0.2], radius: 0.1 },
            Task::PickPlace { pick: [0.1, 0.2], goal: [0.3, 0.3] },
        ] {
            assert_eq!(task_kind_of(task.layout(arm.joints())), task.kind());
        }
    }
}
