//! Trains the full auto-conditioned LSTM-MDN on 45 reaching demos and
//! reports its success rate over 20 seeded rollouts.
//!
//! ```text
//! cargo run --release --example train_reacher [OUT_DIR] [SEED]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use stm_skills::arm::ArmConfig;
use stm_skills::commands::eval_seed;
use stm_skills::demos::gen_reacher_demos;
use stm_skills::eval::{evaluate, reacher_episodes, success_rate, DEFAULT_EVAL_EPISODES, REACHER_EVAL_STEPS};
use stm_skills::math::RngState;
use stm_skills::stm::{save_checkpoint, train, StmConfig};

fn main() -> stm_skills::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/reacher".into());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    std::fs::create_dir_all(&out)?;

    let arm = ArmConfig::default();
    let demos = gen_reacher_demos(45, &arm, &mut RngState::new(seed))?;
    let cfg = StmConfig { seed, ..StmConfig::default() };

    let start = Instant::now();
    let ckpt = train(&demos, &cfg, &arm)?;
    println!("trained {} iterations in {:.1} s", cfg.iterations, start.elapsed().as_secs_f64());
    save_checkpoint(&ckpt, &out.join("stm.json"))?;

    let episodes = reacher_episodes(DEFAULT_EVAL_EPISODES, eval_seed(seed), &arm)?;
    let (_, outcomes) = evaluate(&ckpt, &episodes, REACHER_EVAL_STEPS, &arm)?;
    for o in &outcomes {
        println!("episode {:>2}: final error {:.4} m {}", o.episode, o.final_error, if o.success { "ok" } else { "MISS" });
    }
    println!("success rate {:.0}%", 100.0 * success_rate(&outcomes));
    Ok(())
}
