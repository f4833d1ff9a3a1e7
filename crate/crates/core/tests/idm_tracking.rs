//! Torque-level reaching: STM plans tracked by the learned inverse dynamics
//! model, compared with executing the plan in position mode.

use stm_skills::arm::ArmConfig;
use stm_skills::commands::eval_seed;
use stm_skills::demos::gen_reacher_demos;
use stm_skills::eval::{reacher_episodes, REACHER_EVAL_STEPS};
use stm_skills::idm::{collect_transitions, track, train_idm, Controller, IdmConfig};
use stm_skills::math::RngState;
use stm_skills::stm::{train, StmConfig};
use stm_skills::task::{task_error, SUCCESS_RADIUS};

#[test]
fn learned_idm_reaches_most_goals() {
    let arm = ArmConfig::default();
    let demos = gen_reacher_demos(45, &arm, &mut RngState::new(0)).unwrap();
    let stm = train(&demos, &StmConfig::default(), &arm).unwrap();
    let cfg = IdmConfig::default();
    let data = collect_transitions(&arm, cfg.exploration(), cfg.transitions, cfg.history, cfg.seed).unwrap();
    let idm = train_idm(&data, &cfg, &arm).unwrap();

    let (mut planned, mut executed, mut hits) = (0.0, 0.0, 0);
    let episodes = reacher_episodes(20, eval_seed(0), &arm).unwrap();
    for ep in &episodes {
        let r = track(&stm, Controller::Learned(&idm), &arm, &ep.task, &ep.q0, REACHER_EVAL_STEPS, cfg.substeps).unwrap();
        let (p, e) = (task_error(&r.desired, &ep.task, &arm).unwrap(), task_error(&r.executed, &ep.task, &arm).unwrap());
        planned += p;
        executed += e;
        hits += usize::from(e < SUCCESS_RADIUS);
    }
    println!("learned IDM: {hits}/20 within {SUCCESS_RADIUS} m, mean error {:.4} m (position mode {:.4} m)", executed / 20.0, planned / 20.0);
    assert!(hits >= 10, "{hits}/20 successes");
    assert!(executed > planned);
}
