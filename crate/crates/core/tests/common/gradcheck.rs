//! Finite-difference oracles for analytic gradients. Each check returns the
//! worst relative error over a batch of randomized cases.

use stm_skills::arm::ArmConfig;
use stm_skills::idm::{IdmConfig, IdmNetwork};
use stm_skills::lstm::LstmStack;
use stm_skills::math::{Params, RngState};
use stm_skills::mdn::{mdn_backward, mdn_forward, mdn_nll, MdnWeights};
use stm_skills::trajopt::{cost_grad, cost_v, GoalTerm, SmoothConfig};

const H: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn rand_vec(n: usize, scale: f64, rng: &mut RngState) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-scale, scale)).collect()
}

/// Largest relative error between `analytic` and five-point central
/// differences of `loss` over every coordinate of `x`.
fn worst_error(x: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut at = |k: f64| {
            probe[i] = x[i] + k * H;
            loss(&probe)
        };
        let numeric = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * H);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// `L = Σ_t w_t · h_t + ½ Σ_t ‖h_t‖²` over the top hidden vectors.
fn lstm_loss(stack: &LstmStack, xs: &[Vec<f64>], ws: &[Vec<f64>]) -> f64 {
    let mut state = stack.zero_state();
    xs.iter()
        .zip(ws)
        .map(|(x, w)| {
            let (h, _) = stack.forward(x, &mut state).unwrap();
            h.iter().zip(w).map(|(h, w)| w * h + 0.5 * h * h).sum::<f64>()
        })
        .sum()
}

/// LSTM stacks of up to 2 layers and 16 units unrolled up to 8 steps.
pub fn lstm_stack_unrolls(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..12 {
        let depth = 1 + rng.index(2);
        let hidden = [3, 7, 16][rng.index(3)];
        let input = 1 + rng.index(6);
        let steps = 1 + rng.index(8);
        let mut stack = LstmStack::init(input, hidden, depth, &mut rng);
        // Spread the weights so gates leave their linear regime.
        let flat: Vec<f64> = stack.to_flat().iter().map(|w| 3.0 * w).collect();
        stack.copy_from_flat(&flat);
        let xs: Vec<Vec<f64>> = (0..steps).map(|_| rand_vec(input, 1.0, &mut rng)).collect();
        let ws: Vec<Vec<f64>> = (0..steps).map(|_| rand_vec(hidden, 1.0, &mut rng)).collect();

        let mut state = stack.zero_state();
        let mut caches = Vec::new();
        let mut step_grads = Vec::new();
        for (x, w) in xs.iter().zip(&ws) {
            let (h, cache) = stack.forward(x, &mut state).unwrap();
            caches.push(cache);
            step_grads.push(h.iter().zip(w).map(|(h, w)| w + h).collect::<Vec<_>>());
        }
        let mut grads = stack.zeros_like();
        stack.backward_through_time(&step_grads, &caches, &mut grads).unwrap();

        let mut probe = stack.clone();
        let err = worst_error(&flat, &grads.to_flat(), |p| {
            probe.copy_from_flat(p);
            lstm_loss(&probe, &xs, &ws)
        });
        worst = worst.max(err);
    }
    worst
}

/// Mixture heads with up to 4 components in up to 6 dimensions, with
/// respect to weights and hidden input.
pub fn mdn_heads(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..16 {
        let m = 1 + rng.index(4);
        let d = 1 + rng.index(6);
        let hidden = 2 + rng.index(8);
        let mut head = MdnWeights::init(hidden, m, d, &mut rng);
        let flat: Vec<f64> = head.to_flat().iter().map(|w| 2.0 * w).collect();
        head.copy_from_flat(&flat);
        let h = rand_vec(hidden, 1.0, &mut rng);
        let target = rand_vec(d, 0.5, &mut rng);

        let (params, cache) = mdn_forward(&h, &head).unwrap();
        let mut grads = head.zeros_like();
        let (_, dh) = mdn_backward(&params, &target, &cache, &head, &mut grads).unwrap();

        let mut probe = head.clone();
        let err_w = worst_error(&flat, &grads.to_flat(), |p| {
            probe.copy_from_flat(p);
            mdn_nll(&mdn_forward(&h, &probe).unwrap().0, &target).unwrap()
        });
        let err_h = worst_error(&h, &dh, |x| mdn_nll(&mdn_forward(x, &head).unwrap().0, &target).unwrap());
        worst = worst.max(err_w).max(err_h);
    }
    worst
}

/// Feedforward IDM networks with per-joint mixture heads.
pub fn idm_networks(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..6 {
        let cfg = IdmConfig {
            layers: 1 + rng.index(3),
            hidden: 4 + rng.index(8),
            mixtures: 1 + rng.index(4),
            ..IdmConfig::default()
        };
        let (input, joints) = (3 + rng.index(10), 1 + rng.index(3));
        let net = IdmNetwork::init(input, joints, &cfg, &mut rng);
        let x = rand_vec(input, 1.5, &mut rng);
        let target = rand_vec(joints, 1.0, &mut rng);
        let nll = |n: &IdmNetwork| {
            let (params, _) = n.forward(&x).unwrap();
            params.iter().zip(&target).map(|(p, t)| mdn_nll(p, &[*t]).unwrap()).sum::<f64>()
        };

        let (params, cache) = net.forward(&x).unwrap();
        let mut grads = net.zeros_like();
        let loss = net.backward(&params, &target, &cache, &mut grads).unwrap();
        assert!((loss - nll(&net)).abs() < 1e-12);

        let mut probe = net.clone();
        let err = worst_error(&net.to_flat(), &grads.to_flat(), |p| {
            probe.copy_from_flat(p);
            nll(&probe)
        });
        worst = worst.max(err);
    }
    worst
}

/// Smoothing cost with and without the goal term.
pub fn smoothing_cost(seed: u64) -> f64 {
    let arm = ArmConfig::default();
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let len = 3 + rng.index(20);
        let skeleton: Vec<Vec<f64>> = (0..len).map(|_| rand_vec(3, 1.5, &mut rng)).collect();
        let traj: Vec<Vec<f64>> = skeleton
            .iter()
            .map(|q| q.iter().map(|v| v + rng.uniform_range(-0.2, 0.2)).collect())
            .collect();
        let goal = (rng.uniform() < 0.5).then(|| GoalTerm::new([rng.uniform_range(-0.5, 0.5), rng.uniform_range(0.2, 0.8)]));
        let cfg = SmoothConfig {
            gamma: rng.uniform_range(0.0, 5.0),
            goal,
            ..SmoothConfig::default()
        };
        let analytic: Vec<f64> = cost_grad(&traj, &skeleton, &cfg, &arm).unwrap().concat();
        // q_0 is held fixed, so only the remaining rows are compared.
        let flat = traj.concat();
        let err = worst_error(&flat[3..], &analytic[3..], |p| {
            let path: Vec<Vec<f64>> = flat[..3].iter().chain(p).copied().collect::<Vec<_>>().chunks(3).map(<[f64]>::to_vec).collect();
            cost_v(&path, &skeleton, &cfg, &arm).unwrap()
        });
        assert!(analytic[..3].iter().all(|g| *g == 0.0));
        worst = worst.max(err);
    }
    worst
}
