//! Learns to draw circles from ten demonstrations, then draws them at the
//! trained radii and halfway between.
//!
//! ```text
//! cargo run --release --example circle [OUT_DIR]
//! ```

use std::path::PathBuf;

use stm_skills::commands::{circle_eval_radii, write_ee_csv};
use stm_skills::config::ExperimentConfig;
use stm_skills::demos::gen_circle_demos;
use stm_skills::eval::evaluate_circle;
use stm_skills::stm::{save_checkpoint, train};

fn main() -> stm_skills::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/circle".into());
    std::fs::create_dir_all(&out)?;
    let cfg = ExperimentConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/circle.toml"))?;
    let (arm, task) = (&cfg.arm, &cfg.task);

    let demos = gen_circle_demos(&task.circle_radii, task.circle_center, task.circle_steps, arm)?;
    let ckpt = train(&demos, &cfg.stm_config(), arm)?;
    save_checkpoint(&ckpt, &out.join("circle_stm.json"))?;

    let radii = circle_eval_radii(&task.circle_radii);
    let (trajs, outcomes) = evaluate_circle(&ckpt, &radii, task.circle_center, task.circle_steps, arm)?;
    println!("radius   rmse     worst");
    for (o, traj) in outcomes.iter().zip(&trajs) {
        println!("{:.4}  {:.4}  {:>5.1}% {}", o.radius, o.rmse, 100.0 * o.max_relative_error, if o.success { "" } else { "MISS" });
        write_ee_csv(traj, arm, &out.join(format!("circle_{:.4}.ee.csv", o.radius)))?;
    }
    Ok(())
}
