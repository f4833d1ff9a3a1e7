//! Generates the reacher, circle and pick-and-place demonstration sets and
//! prints a summary of each.
//!
//! ```text
//! cargo run --release --example gen_demos [OUT_DIR]
//! ```

use std::path::{Path, PathBuf};

use stm_skills::arm::ArmConfig;
use stm_skills::demos::{default_circle_radii, gen_circle_demos, gen_pickplace_demos, gen_reacher_demos, CIRCLE_CENTER, CIRCLE_STEPS};
use stm_skills::math::RngState;
use stm_skills::stm::{write_dataset, Trajectory};
use stm_skills::task::success_check;

fn summarize(name: &str, demos: &[Trajectory], arm: &ArmConfig) {
    let lens = demos.iter().map(Trajectory::len);
    let (lo, hi) = (lens.clone().min().unwrap_or(0), lens.max().unwrap_or(0));
    let ok = demos.iter().filter(|d| success_check(d, &d.task, arm)).count();
    println!("{name:<12} {:>4} demos, {lo}..={hi} states, {ok} pass the task check", demos.len());
}

pub fn run(out: &Path) -> stm_skills::Result<()> {
    std::fs::create_dir_all(out)?;
    let arm = ArmConfig::default();

    let reacher = gen_reacher_demos(45, &arm, &mut RngState::new(0))?;
    summarize("reacher", &reacher, &arm);
    write_dataset(&out.join("reacher.jsonl"), &reacher)?;

    let circle = gen_circle_demos(&default_circle_radii(), CIRCLE_CENTER, CIRCLE_STEPS, &arm)?;
    summarize("circle", &circle, &arm);
    write_dataset(&out.join("circle.jsonl"), &circle)?;

    let pick_place = gen_pickplace_demos(150, &arm, &mut RngState::new(0))?;
    summarize("pick_place", &pick_place, &arm);
    write_dataset(&out.join("pick_place.jsonl"), &pick_place)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> stm_skills::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/demos".into());
    run(&out)
}
