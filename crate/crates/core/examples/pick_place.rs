//! Pick-and-place with a gripper channel: 150 demos through approach,
//! grasp, transfer and release waypoints.
//!
//! ```text
//! cargo run --release --example pick_place [OUT_DIR] [ITERATIONS]
//! ```
//!
//! The full 30,000 iterations take a while on one core.

use std::path::PathBuf;

use stm_skills::commands::{eval_seed, pick_place_episodes, write_ee_csv};
use stm_skills::config::ExperimentConfig;
use stm_skills::demos::{gen_pickplace_demos, PICK_PLACE_LENGTHS};
use stm_skills::eval::{evaluate, success_rate};
use stm_skills::math::RngState;
use stm_skills::stm::{save_checkpoint, train};

fn main() -> stm_skills::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/pick_place".into());
    std::fs::create_dir_all(&out)?;
    let cfg = ExperimentConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/pick_place.toml"))?;
    let mut stm = cfg.stm_config();
    if let Some(n) = args.next().and_then(|s| s.parse().ok()) {
        stm.iterations = n;
    }

    let demos = gen_pickplace_demos(cfg.task.demo_count(), &cfg.arm, &mut RngState::new(cfg.seed))?;
    let ckpt = train(&demos, &stm, &cfg.arm)?;
    save_checkpoint(&ckpt, &out.join("pick_place_stm.json"))?;

    let episodes = pick_place_episodes(20, eval_seed(cfg.seed), &cfg)?;
    let (trajs, outcomes) = evaluate(&ckpt, &episodes, PICK_PLACE_LENGTHS.1 - 1, &cfg.arm)?;
    write_ee_csv(&trajs[0], &cfg.arm, &out.join("pick_place_0.ee.csv"))?;
    println!("placed within 5 cm in {:.0}% of 20 rollouts", 100.0 * success_rate(&outcomes));
    Ok(())
}
