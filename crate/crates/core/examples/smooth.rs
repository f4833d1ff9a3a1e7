//! Smooths reaching trajectories produced by a briefly trained model and
//! shows how the smoothness weight trades closeness for a straighter path.
//!
//! ```text
//! cargo run --release --example smooth [OUT_DIR]
//! ```

use std::path::{Path, PathBuf};

use stm_skills::arm::ArmConfig;
use stm_skills::demos::gen_reacher_demos;
use stm_skills::eval::{evaluate, reacher_episodes};
use stm_skills::math::RngState;
use stm_skills::stm::{train, write_dataset, StmConfig};
use stm_skills::trajopt::{apply_path, smooth, smoothness, SmoothConfig};

/// Largest distance of any point from the straight joint-space line
/// between the endpoints.
fn chord_deviation(path: &[Vec<f64>]) -> f64 {
    let (a, b) = (&path[0], &path[path.len() - 1]);
    let n = (path.len() - 1) as f64;
    path.iter()
        .enumerate()
        .map(|(t, q)| {
            let s = t as f64 / n;
            q.iter().zip(a.iter().zip(b)).map(|(q, (a, b))| (q - (a + s * (b - a))).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn run(out: &Path) -> stm_skills::Result<()> {
    std::fs::create_dir_all(out)?;
    let arm = ArmConfig::default();
    let demos = gen_reacher_demos(45, &arm, &mut RngState::new(0))?;
    let cfg = StmConfig { iterations: 300, ..StmConfig::default() };
    let ckpt = train(&demos, &cfg, &arm)?;
    let (skeletons, _) = evaluate(&ckpt, &reacher_episodes(3, 11, &arm)?, 60, &arm)?;

    let mut smoothed = Vec::new();
    for (i, skel) in skeletons.iter().enumerate() {
        let path = skel.joint_path();
        println!("trajectory {i}: smoothness {:.5}, chord deviation {:.4}", smoothness(&path), chord_deviation(&path));
        for gamma in [1.0, 10.0, 100.0] {
            let opt = SmoothConfig { gamma, iterations: 2000, ..SmoothConfig::default() };
            let opt = SmoothConfig { step_size: 0.9 * opt.stable_step_bound(), ..opt };
            let result = smooth(&path, &opt, &arm)?;
            println!(
                "  gamma {gamma:>5}: cost {:.5} -> {:.5}, smoothness {:.5}, chord deviation {:.4}",
                result.history[0],
                result.history[result.history.len() - 1],
                smoothness(&result.path),
                chord_deviation(&result.path)
            );
            if gamma == 10.0 {
                smoothed.push(apply_path(skel, &result.path, &arm)?);
            }
        }
    }
    write_dataset(&out.join("skeletons.jsonl"), &skeletons)?;
    write_dataset(&out.join("smoothed.jsonl"), &smoothed)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> stm_skills::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/smooth".into());
    run(&out)
}
