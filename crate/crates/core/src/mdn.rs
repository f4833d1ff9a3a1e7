//! Mixture-density output head.
//!
//! A linear map from the hidden vector produces `m·(2 + d)` raw outputs laid
//! out as `[mixing logits (m) | log-scales (m) | means (m×d, component-major)]`.
//! The mixture is isotropic: component `i` has density
//! `(2πσ_i²)^(-d/2) · exp(-‖x - μ_i‖² / 2σ_i²)`.

use serde::{Deserialize, Serialize};

use crate::dense::Linear;
use crate::error::{Error, Result};
use crate::math::{logsumexp_unchecked, Matrix, Params, RngState};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdnWeights {
    pub mixtures: usize,
    pub dim: usize,
    pub sigma_floor: f64,
    pub linear: Linear,
}

impl MdnWeights {
    pub fn zeros(hidden: usize, mixtures: usize, dim: usize) -> Self {
        Self {
            mixtures,
            dim,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            linear: Linear::zeros(hidden, raw_len(mixtures, dim)),
        }
    }

    pub fn init(hidden: usize, mixtures: usize, dim: usize, rng: &mut RngState) -> Self {
        let mut linear = Linear::init(hidden, raw_len(mixtures, dim), rng);
        // Start with moderate spreads rather than σ ≈ 1 in every direction.
        for k in mixtures..2 * mixtures {
            linear.b[k] = -1.0;
        }
        Self {
            mixtures,
            dim,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            linear,
        }
    }

    pub fn hidden(&self) -> usize {
        self.linear.input_size()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden(), self.mixtures, self.dim)
    }
}

impl Params for MdnWeights {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.linear.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.linear.visit_mut(f)
    }
}

pub fn raw_len(mixtures: usize, dim: usize) -> usize {
    mixtures * (2 + dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub alpha: Vec<f64>,
    pub log_alpha: Vec<f64>,
    /// Component means, `m × d` row-major.
    pub mu: Matrix,
    pub sigma: Vec<f64>,
    pub sigma_floor: f64,
}

impl MixtureParams {
    /// Builds a mixture from raw network outputs.
    pub fn from_raw(raw: &[f64], mixtures: usize, dim: usize, sigma_floor: f64) -> Result<Self> {
        if raw.len() != raw_len(mixtures, dim) {
            return Err(Error::dim("mdn raw outputs", raw_len(mixtures, dim), raw.len()));
        }
        if mixtures == 0 {
            return Err(Error::Empty("mixture"));
        }
        let logits = &raw[..mixtures];
        let lse = logsumexp_unchecked(logits);
        let log_alpha: Vec<f64> = logits.iter().map(|&z| z - lse).collect();
        let alpha = log_alpha.iter().map(|l| l.exp()).collect();
        let sigma = raw[mixtures..2 * mixtures]
            .iter()
            .map(|&s| s.exp() + sigma_floor)
            .collect();
        let mu = Matrix::from_vec(mixtures, dim, raw[2 * mixtures..].to_vec())?;
        Ok(Self {
            alpha,
            log_alpha,
            mu,
            sigma,
            sigma_floor,
        })
    }

    pub fn mixtures(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    /// `ln α_i + ln N_iso(target; μ_i, σ_i)` for every component.
    fn component_log_joint(&self, target: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        (0..self.mixtures())
            .map(|i| {
                let s = self.sigma[i];
                let sq: f64 = self
                    .mu
                    .row(i)
                    .iter()
                    .zip(target)
                    .map(|(m, t)| (t - m) * (t - m))
                    .sum();
                self.log_alpha[i] - 0.5 * d * LN_2PI - d * s.ln() - sq / (2.0 * s * s)
            })
            .collect()
    }

    /// Index of the component with the largest mixing weight (lowest index on ties).
    pub fn mode_component(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > self.alpha[best] {
                best = i;
            }
        }
        best
    }
}

/// Input kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct MdnCache {
    h: Vec<f64>,
}

pub fn mdn_forward(h: &[f64], w: &MdnWeights) -> Result<(MixtureParams, MdnCache)> {
    let raw = w.linear.forward(h)?;
    let params = MixtureParams::from_raw(&raw, w.mixtures, w.dim, w.sigma_floor)?;
    Ok((params, MdnCache { h: h.to_vec() }))
}

/// Negative log-likelihood of `target` under the mixture.
pub fn mdn_nll(params: &MixtureParams, target: &[f64]) -> Result<f64> {
    check_target(params, target)?;
    Ok(-logsumexp_unchecked(&params.component_log_joint(target)))
}

fn check_target(params: &MixtureParams, target: &[f64]) -> Result<()> {
    if params.mixtures() == 0 {
        return Err(Error::Empty("mixture"));
    }
    if target.len() != params.dim() {
        return Err(Error::dim("mdn target", params.dim(), target.len()));
    }
    if target.iter().any(|t| !t.is_finite()) {
        return Err(Error::non_finite("mdn target"));
    }
    Ok(())
}

/// Loss and its gradient with respect to the raw head outputs.
///
/// With responsibilities `γ_i = α_i N_i / Σ_j α_j N_j`:
/// `∂L/∂logit_i = α_i − γ_i`,
/// `∂L/∂μ_i = γ_i (μ_i − x) / σ_i²`,
/// `∂L/∂s_i = γ_i (d/σ_i − ‖x − μ_i‖²/σ_i³) · (σ_i − σ_floor)`.
pub fn nll_raw_gradient(params: &MixtureParams, target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_target(params, target)?;
    let m = params.mixtures();
    let d = params.dim();
    let joint = params.component_log_joint(target);
    let lse = logsumexp_unchecked(&joint);
    let mut raw = vec![0.0; raw_len(m, d)];
    for i in 0..m {
        let gamma = (joint[i] - lse).exp();
        let s = params.sigma[i];
        let mut sq = 0.0;
        for k in 0..d {
            let diff = params.mu.get(i, k) - target[k];
            sq += diff * diff;
            raw[2 * m + i * d + k] = gamma * diff / (s * s);
        }
        raw[i] = params.alpha[i] - gamma;
        raw[m + i] = gamma * (d as f64 / s - sq / (s * s * s)) * (s - params.sigma_floor);
    }
    Ok((-lse, raw))
}

/// Gradient of the NLL with respect to the hidden input; weight gradients
/// are accumulated into `grads`. Returns `(loss, dL/dh)`.
pub fn mdn_backward(
    params: &MixtureParams,
    target: &[f64],
    cache: &MdnCache,
    w: &MdnWeights,
    grads: &mut MdnWeights,
) -> Result<(f64, Vec<f64>)> {
    if cache.h.len() != w.hidden() || params.mixtures() != w.mixtures || params.dim() != w.dim {
        return Err(Error::StaleCache("mdn cache does not match head shape"));
    }
    let (loss, raw) = nll_raw_gradient(params, target)?;
    let dh = w.linear.backward(&cache.h, &raw, &mut grads.linear);
    Ok((loss, dh))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Mean of the most probable component.
    #[default]
    Deterministic,
    /// Component drawn from α, then a Gaussian draw around its mean.
    Stochastic,
}

pub fn mdn_sample(params: &MixtureParams, rng: &mut RngState, mode: SampleMode) -> Vec<f64> {
    match mode {
        SampleMode::Deterministic => params.mu.row(params.mode_component()).to_vec(),
        SampleMode::Stochastic => {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = params.mixtures() - 1;
            for (i, a) in params.alpha.iter().enumerate() {
                acc += a;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let s = params.sigma[pick];
            params
                .mu
                .row(pick)
                .iter()
                .map(|&m| m + s * rng.standard_normal())
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_params(m: usize, d: usize, rng: &mut RngState) -> MixtureParams {
        let raw: Vec<f64> = (0..raw_len(m, d)).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
        MixtureParams::from_raw(&raw, m, d, DEFAULT_SIGMA_FLOOR).unwrap()
    }

    /// Straight evaluation of -ln Σ α_i (2πσ_i²)^(-d/2) exp(-‖x-μ_i‖²/2σ_i²),
    /// no log-space shifting.
    fn direct_nll(p: &MixtureParams, x: &[f64]) -> f64 {
        let d = p.dim() as i32;
        let mut total = 0.0;
        for i in 0..p.mixtures() {
            let s = p.sigma[i];
            let sq: f64 = (0..p.dim()).map(|k| (x[k] - p.mu.get(i, k)).powi(2)).sum();
            let norm = (2.0 * std::f64::consts::PI * s * s).powf(-(d as f64) / 2.0);
            total += p.alpha[i] * norm * (-sq / (2.0 * s * s)).exp();
        }
        -total.ln()
    }

    #[test]
    fn zero_network_is_uniform() {
        let w = MdnWeights::zeros(4, 3, 2);
        let (p, _) = mdn_forward(&[0.3, -0.1, 2.0, 0.0], &w).unwrap();
        for a in &p.alpha {
            assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-15);
        }
        for s in &p.sigma {
            assert_abs_diff_eq!(*s, 1.0 + DEFAULT_SIGMA_FLOOR, epsilon = 1e-15);
        }
        assert!(p.mu.as_slice().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn forward_matches_reevaluation() {
        let mut rng = RngState::new(4);
        let (hs, m, d) = (5, 3, 2);
        let w = MdnWeights::init(hs, m, d, &mut rng);
        let h: Vec<f64> = (0..hs).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let (p, _) = mdn_forward(&h, &w).unwrap();
        let out = |r: usize| {
            w.linear.b[r] + (0..hs).map(|k| w.linear.w.get(r, k) * h[k]).sum::<f64>()
        };
        let z: Vec<f64> = (0..m).map(out).collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for i in 0..m {
            assert_abs_diff_eq!(p.alpha[i], z[i].exp() / denom, epsilon = 1e-12);
            assert_abs_diff_eq!(p.sigma[i], out(m + i).exp() + 1e-3, epsilon = 1e-12);
            for k in 0..d {
                assert_abs_diff_eq!(p.mu.get(i, k), out(2 * m + i * d + k), epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(p.alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standard_normal_at_mean() {
        let p = MixtureParams::from_raw(&[0.0, 0.0, 0.7], 1, 1, 0.0).unwrap();
        assert_abs_diff_eq!(mdn_nll(&p, &[0.7]).unwrap(), 0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn identical_components_collapse() {
        let one = MixtureParams::from_raw(&[0.0, 0.2, 0.5, -0.3], 1, 2, 1e-3).unwrap();
        let two = MixtureParams::from_raw(&[1.0, 1.0, 0.2, 0.2, 0.5, -0.3, 0.5, -0.3], 2, 2, 1e-3).unwrap();
        let x = [0.1, 0.9];
        assert_abs_diff_eq!(mdn_nll(&one, &x).unwrap(), mdn_nll(&two, &x).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn nll_matches_direct_evaluation() {
        let mut rng = RngState::new(17);
        for _ in 0..20 {
            let p = random_params(3, 4, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let stable = mdn_nll(&p, &x).unwrap();
            assert!((stable - direct_nll(&p, &x)).abs() < 1e-10);
        }
    }

    #[test]
    fn nll_errors() {
        let p = MixtureParams::from_raw(&[0.0, 0.0, 0.0], 1, 1, 1e-3).unwrap();
        assert!(matches!(mdn_nll(&p, &[f64::NAN]), Err(Error::NonFinite { .. })));
        assert!(mdn_nll(&p, &[1.0, 2.0]).is_err());
        assert!(matches!(MixtureParams::from_raw(&[], 0, 1, 1e-3), Err(Error::Empty(_))));
    }

    #[test]
    fn single_component_mean_gradient() {
        let p = MixtureParams::from_raw(&[0.3, -0.4, 1.0, -2.0], 1, 2, 1e-3).unwrap();
        let x = [0.5, 0.25];
        let (_, raw) = nll_raw_gradient(&p, &x).unwrap();
        assert_abs_diff_eq!(raw[0], 0.0, epsilon = 1e-15);
        let s2 = p.sigma[0] * p.sigma[0];
        assert_abs_diff_eq!(raw[2], (1.0 - 0.5) / s2, epsilon = 1e-12);
        assert_abs_diff_eq!(raw[3], (-2.0 - 0.25) / s2, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_mixture_has_zero_logit_gradient() {
        let p = MixtureParams::from_raw(&[0.4, 0.4, -0.2, -0.2, 0.8, -0.8], 2, 1, 1e-3).unwrap();
        let (_, raw) = nll_raw_gradient(&p, &[0.0]).unwrap();
        assert_abs_diff_eq!(raw[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(raw[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngState::new(123);
        let (hs, m, d) = (6, 3, 4);
        let mut w = MdnWeights::init(hs, m, d, &mut rng);
        w.linear.b.iter_mut().for_each(|b| *b = rng.uniform_range(-0.5, 0.5));
        let h: Vec<f64> = (0..hs).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let loss = |w: &MdnWeights, h: &[f64]| mdn_nll(&mdn_forward(h, w).unwrap().0, &x).unwrap();

        let (p, cache) = mdn_forward(&h, &w).unwrap();
        let mut g = w.zeros_like();
        let (l, dh) = mdn_backward(&p, &x, &cache, &w, &mut g).unwrap();
        assert_abs_diff_eq!(l, loss(&w, &h), epsilon = 1e-14);

        let eps = 1e-5;
        let flat = w.to_flat();
        let analytic = g.to_flat();
        for k in 0..flat.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            let mut fp = flat.clone();
            fp[k] += eps;
            wp.copy_from_flat(&fp);
            fp[k] -= 2.0 * eps;
            wm.copy_from_flat(&fp);
            let num = (loss(&wp, &h) - loss(&wm, &h)) / (2.0 * eps);
            let rel = (num - analytic[k]).abs() / num.abs().max(analytic[k].abs()).max(1e-4);
            assert!(rel < 1e-6, "param {k}: {} vs {num}", analytic[k]);
        }
        for k in 0..hs {
            let mut hp = h.clone();
            hp[k] += eps;
            let mut hm = h.clone();
            hm[k] -= eps;
            let num = (loss(&w, &hp) - loss(&w, &hm)) / (2.0 * eps);
            assert!((num - dh[k]).abs() / num.abs().max(1e-4) < 1e-6);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = RngState::new(1);
        let w = MdnWeights::init(3, 2, 1, &mut rng);
        let other = MdnWeights::init(4, 2, 1, &mut rng);
        let (p, cache) = mdn_forward(&[0.1, 0.2, 0.3], &w).unwrap();
        let mut g = other.zeros_like();
        assert!(matches!(
            mdn_backward(&p, &[0.0], &cache, &other, &mut g),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn deterministic_sample_is_argmax_mean() {
        let raw = [0.1f64.ln(), 0.9f64.ln(), 0.0, 0.0, -1.0, 3.0];
        let p = MixtureParams::from_raw(&raw, 2, 1, 1e-3).unwrap();
        let mut rng = RngState::new(0);
        assert_eq!(mdn_sample(&p, &mut rng, SampleMode::Deterministic), vec![3.0]);
        // Ties go to the lowest index.
        let tie = MixtureParams::from_raw(&[0.0, 0.0, 0.0, 0.0, 5.0, 6.0], 2, 1, 1e-3).unwrap();
        assert_eq!(mdn_sample(&tie, &mut rng, SampleMode::Deterministic), vec![5.0]);
    }

    #[test]
    fn stochastic_sample_with_floor_scale_stays_near_mean() {
        let raw = [-20.0, 20.0, -60.0, -60.0, 1.0, 0.0, -0.5, 2.0];
        let p = MixtureParams::from_raw(&raw, 2, 2, 1e-3).unwrap();
        let mut rng = RngState::new(9);
        for _ in 0..200 {
            let x = mdn_sample(&p, &mut rng, SampleMode::Stochastic);
            let dist = ((x[0] + 0.5).powi(2) + (x[1] - 2.0).powi(2)).sqrt();
            assert!(dist < 6e-3, "{dist}");
        }
    }

    #[test]
    fn stochastic_component_frequencies() {
        let raw = [0.3f64.ln(), 0.7f64.ln(), -30.0, -30.0, -10.0, 10.0];
        let p = MixtureParams::from_raw(&raw, 2, 1, 1e-3).unwrap();
        let mut rng = RngState::new(31);
        let n = 100_000;
        let first = (0..n)
            .filter(|_| mdn_sample(&p, &mut rng, SampleMode::Stochastic)[0] < 0.0)
            .count();
        let freq = first as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.01, "{freq}");
    }

    proptest! {
        #[test]
        fn nll_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = RngState::new(seed);
            let (m, d) = (3, 2);
            let raw: Vec<f64> = (0..raw_len(m, d)).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let x = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
            let perm = [2usize, 0, 1];
            let mut shuffled = vec![0.0; raw.len()];
            for (dst, &src) in perm.iter().enumerate() {
                shuffled[dst] = raw[src];
                shuffled[m + dst] = raw[m + src];
                for k in 0..d {
                    shuffled[2 * m + dst * d + k] = raw[2 * m + src * d + k];
                }
            }
            let a = mdn_nll(&MixtureParams::from_raw(&raw, m, d, 1e-3).unwrap(), &x).unwrap();
            let b = mdn_nll(&MixtureParams::from_raw(&shuffled, m, d, 1e-3).unwrap(), &x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mixture_bound(seed in 0u64..500) {
            let mut rng = RngState::new(seed);
            let p = random_params(4, 3, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            let nll = mdn_nll(&p, &x).unwrap();
            // Best single component (its own density, no α weighting).
            let best = (0..4).map(|i| {
                let single = MixtureParams::from_raw(
                    &[&[0.0], &[(p.sigma[i] - 1e-3).ln()], p.mu.row(i)].concat(), 1, 3, 1e-3,
                ).unwrap();
                mdn_nll(&single, &x).unwrap()
            }).fold(f64::INFINITY, f64::min);
            prop_assert!(nll >= best - (4f64).ln() - 1e-9);
            prop_assert!(p.alpha.iter().all(|&a| a >= 0.0));
            prop_assert!((p.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.sigma.iter().all(|&s| s >= 1e-3));
        }

        #[test]
        fn mode_invariant_under_logit_scaling(seed in 0u64..500, scale in 0.01f64..50.0) {
            let mut rng = RngState::new(seed);
            let mut raw: Vec<f64> = (0..raw_len(3, 1)).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            let a = MixtureParams::from_raw(&raw, 3, 1, 1e-3).unwrap().mode_component();
            raw[..3].iter_mut().for_each(|z| *z *= scale);
            let b = MixtureParams::from_raw(&raw, 3, 1, 1e-3).unwrap().mode_component();
            prop_assert_eq!(a, b);
        }
    }
}
