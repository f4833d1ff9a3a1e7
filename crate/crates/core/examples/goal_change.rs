//! Moves the reaching goal halfway through a rollout that is longer than
//! any demonstration, and writes the end-effector path for plotting.
//!
//! ```text
//! cargo run --release --example goal_change [OUT_DIR]
//! ```

use std::path::PathBuf;

use stm_skills::arm::{forward_kinematics, ArmConfig};
use stm_skills::commands::{eval_seed, write_ee_csv};
use stm_skills::demos::gen_reacher_demos;
use stm_skills::eval::{evaluate, goal_change_episodes, success_rate, GOAL_CHANGE_AT, GOAL_CHANGE_STEPS};
use stm_skills::math::RngState;
use stm_skills::stm::{rollout, train, GoalChange, RolloutOptions, StmConfig};
use stm_skills::task::Task;

fn main() -> stm_skills::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/goal_change".into());
    std::fs::create_dir_all(&out)?;
    let arm = ArmConfig::default();
    let demos = gen_reacher_demos(45, &arm, &mut RngState::new(0))?;
    let ckpt = train(&demos, &StmConfig::default(), &arm)?;

    let q0 = [0.3, 0.9, 0.7];
    let first = Task::Reacher { goal: [0.45, 0.55] };
    let change = GoalChange { step: GOAL_CHANGE_AT, psi: vec![0.75, -0.1] };
    let traj = rollout(&ckpt, &q0, &first, GOAL_CHANGE_STEPS, &[change], &arm, RolloutOptions::default())?;
    let path = traj.joint_path();
    for t in [0, GOAL_CHANGE_AT, GOAL_CHANGE_STEPS] {
        let ee = forward_kinematics(&path[t], &arm)?;
        println!("step {t:>3}: end effector ({:.3}, {:.3})", ee[0], ee[1]);
    }
    write_ee_csv(&traj, &arm, &out.join("goal_change.ee.csv"))?;

    let episodes = goal_change_episodes(20, eval_seed(0), GOAL_CHANGE_AT, &arm)?;
    let (_, outcomes) = evaluate(&ckpt, &episodes, GOAL_CHANGE_STEPS, &arm)?;
    println!("reached the moved goal in {:.0}% of 20 rollouts", 100.0 * success_rate(&outcomes));
    Ok(())
}
