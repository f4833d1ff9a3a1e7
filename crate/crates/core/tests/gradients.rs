//! Analytic gradients against central finite differences on randomized
//! networks and trajectories.

mod common;

use common::gradcheck;

#[test]
fn lstm_stack_unrolls() {
    for seed in 0..3 {
        let err = gradcheck::lstm_stack_unrolls(seed);
        assert!(err < 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn mdn_heads() {
    for seed in 0..3 {
        let err = gradcheck::mdn_heads(seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn idm_networks() {
    for seed in 0..3 {
        let err = gradcheck::idm_networks(seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn smoothing_cost() {
    for seed in 0..3 {
        let err = gradcheck::smoothing_cost(seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}
