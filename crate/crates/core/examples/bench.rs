//! Times circle generation by the learned model against IK tracking.
//!
//! ```text
//! cargo run --release --example bench
//! ```

use std::path::PathBuf;

use stm_skills::commands::bench_cmd;
use stm_skills::config::ExperimentConfig;
use stm_skills::demos::gen_circle_demos;
use stm_skills::stm::{save_checkpoint, train};

fn main() -> stm_skills::Result<()> {
    let cfg = ExperimentConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/circle.toml"))?;
    let dir = std::env::temp_dir().join("stm-skills-bench");
    std::fs::create_dir_all(&dir)?;
    let demos = gen_circle_demos(&cfg.task.circle_radii, cfg.task.circle_center, cfg.task.circle_steps, &cfg.arm)?;
    let stm = cfg.stm_config();
    let ckpt = train(&demos, &stm, &cfg.arm)?;
    let path = dir.join("circle_stm.json");
    save_checkpoint(&ckpt, &path)?;

    let report = bench_cmd(&cfg, &path, 20)?;
    println!("{} circles of {} steps", report.trajectories, report.steps);
    println!("stm {:.3} ms per trajectory", 1e3 * report.stm_seconds);
    println!("ik  {:.3} ms per trajectory", 1e3 * report.ik_seconds);
    println!("ik / stm = {:.2}", report.speedup);
    Ok(())
}
