//! Open-loop torque control: a reaching STM plans joint positions and an
//! inverse dynamics model turns them into torques at ten times the rate.
//! The analytic inverse dynamics runs alongside as a reference.
//!
//! ```text
//! cargo run --release --example idm_tracking [OUT_DIR]
//! ```

use std::fs::File;
use std::path::PathBuf;

use stm_skills::arm::ArmConfig;
use stm_skills::commands::held_out_seed;
use stm_skills::demos::gen_reacher_demos;
use stm_skills::idm::{collect_transitions, median, oracle_relative_errors, save_idm, track, train_idm, write_track_csv, Controller, IdmConfig};
use stm_skills::math::RngState;
use stm_skills::stm::{train, StmConfig};
use stm_skills::task::{task_error, Task};

fn main() -> stm_skills::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/idm".into());
    std::fs::create_dir_all(&out)?;
    let arm = ArmConfig::default();

    let cfg = IdmConfig::default();
    let data = collect_transitions(&arm, cfg.exploration(), cfg.transitions, cfg.history, cfg.seed)?;
    let idm = train_idm(&data, &cfg, &arm)?;
    save_idm(&idm, &out.join("idm.json"))?;
    let held_out = collect_transitions(&arm, cfg.exploration(), 1000, cfg.history, held_out_seed(cfg.seed))?;
    let errors = oracle_relative_errors(&idm, &held_out)?;
    println!("held-out median relative torque error {:.3}", median(&errors).unwrap_or(f64::NAN));

    let demos = gen_reacher_demos(45, &arm, &mut RngState::new(0))?;
    let stm = train(&demos, &StmConfig::default(), &arm)?;
    let task = Task::Reacher { goal: [0.45, 0.55] };
    let q0 = [0.3, 0.9, 0.7];
    for (name, controller) in [("oracle", Controller::Oracle), ("learned", Controller::Learned(&idm))] {
        let result = track(&stm, controller, &arm, &task, &q0, 70, cfg.substeps)?;
        let worst = result.records.iter().map(|r| r.error).fold(0.0, f64::max);
        println!(
            "{name:<8} worst joint error {worst:.2e} rad, planned goal error {:.4} m, executed goal error {:.4} m",
            task_error(&result.desired, &task, &arm)?,
            task_error(&result.executed, &task, &arm)?
        );
        write_track_csv(&result.records, File::create(out.join(format!("track_{name}.csv")))?)?;
    }
    Ok(())
}
