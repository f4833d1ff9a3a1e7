//! Trains each combination of output head and training schedule on the
//! same reaching demos and compares success rates.
//!
//! ```text
//! cargo run --release --example ablation [SEEDS]
//! ```

use stm_skills::arm::ArmConfig;
use stm_skills::commands::eval_seed;
use stm_skills::demos::gen_reacher_demos;
use stm_skills::eval::{evaluate, reacher_episodes, success_rate, REACHER_EVAL_STEPS};
use stm_skills::math::RngState;
use stm_skills::stm::{train, StmConfig, Variant};

fn main() -> stm_skills::Result<()> {
    env_logger::init();
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let arm = ArmConfig::default();
    println!("{:<12} {}", "variant", (0..seeds).map(|s| format!("seed {s}")).collect::<Vec<_>>().join("  "));
    for variant in Variant::ALL {
        let mut rates = Vec::new();
        for seed in 0..seeds {
            let demos = gen_reacher_demos(45, &arm, &mut RngState::new(seed))?;
            let mut cfg = StmConfig { seed, ..StmConfig::default() };
            variant.apply(&mut cfg);
            let ckpt = train(&demos, &cfg, &arm)?;
            let episodes = reacher_episodes(20, eval_seed(seed), &arm)?;
            rates.push(success_rate(&evaluate(&ckpt, &episodes, REACHER_EVAL_STEPS, &arm)?.1));
        }
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let cells: Vec<String> = rates.iter().map(|r| format!("{:>6.0}%", 100.0 * r)).collect();
        println!("{:<12} {}  mean {:.0}%", variant.name(), cells.join(" "), 100.0 * mean);
    }
    Ok(())
}
