//! Dense linear algebra, numerically stable scalar helpers, seeded randomness
//! and the Adam optimizer shared by every learning module.
//!
//! Everything is `f64`. Matrices are row-major with explicit dimensions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut RngState) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.uniform_range(-scale, scale))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `out += self · x`. Dimensions are the caller's responsibility.
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · y`.
    #[inline]
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr != 0.0 {
                axpy(yr, row, out);
            }
        }
    }

    /// `self += a ⊗ b` (outer product, `a` indexes rows).
    #[inline]
    pub fn outer_acc(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(cols)) {
            if ar != 0.0 {
                axpy(ar, b, row);
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

/// Checked matrix-vector product.
pub fn matvec(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::dim("matvec", w.cols(), x.len()));
    }
    let mut out = vec![0.0; w.rows()];
    w.matvec_acc(x, &mut out);
    Ok(out)
}

/// `log Σ exp(x_i)`, shifted by the maximum so it stays finite whenever any
/// entry is finite.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("logsumexp"));
    }
    Ok(logsumexp_unchecked(xs))
}

#[inline]
pub(crate) fn logsumexp_unchecked(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp_unchecked(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scales `grads` in place so that its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = norm_sq(grads).sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Deterministic random stream.
///
/// Backed by ChaCha8 seeded through `SeedableRng::seed_from_u64`, so the
/// stream for a given seed is identical on every platform. Uniform `f64`
/// draws take the top 53 bits of a `u64` and scale by `2^-53`.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for sub-task `index` (demo number, rollout number...).
    pub fn derived(seed: u64, index: u64) -> Self {
        Self::new(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Standard normal draw by the Box–Muller transform:
    /// `z = sqrt(-2 ln u1) · cos(2π u2)` with `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Draw from `N(mean, std²)`.
pub fn gaussian_sample(rng: &mut RngState, mean: f64, std: f64) -> Result<f64> {
    if !(std >= 0.0) {
        return Err(Error::Invalid(format!("negative standard deviation {std}")));
    }
    if std == 0.0 {
        return Ok(mean);
    }
    Ok(mean + std * rng.standard_normal())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim("adam params", self.m.len(), params.len()));
        }
        if grads.len() != self.m.len() {
            return Err(Error::dim("adam grads", self.m.len(), grads.len()));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::non_finite(format!("adam gradient entry {i}")));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(params: &[f64], grads: &[f64], state: AdamState) -> Result<(Vec<f64>, AdamState)> {
    let mut state = state;
    let mut out = params.to_vec();
    state.step(&mut out, grads)?;
    Ok((out, state))
}

/// Parameter containers expose their tensors as a fixed-order list of slices
/// so optimizers and gradient checks can treat them as one flat vector.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn copy_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        debug_assert_eq!(offset, flat.len());
    }

    fn write_flat(&self, out: &mut [f64]) {
        let mut offset = 0;
        self.visit(&mut |s| {
            out[offset..offset + s.len()].copy_from_slice(s);
            offset += s.len();
        });
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|x| *x = 0.0));
    }
}

impl Params for Matrix {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.data)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn triple_loop(w: &Matrix, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            let mut acc = 0.0;
            for j in 0..w.cols() {
                acc += w.as_slice()[i * w.cols() + j] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn matvec_identity_and_zero() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(matvec(&Matrix::identity(3), &x).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::zeros(2, 3), &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_matches_triple_loop() {
        let mut rng = RngState::new(7);
        let w = Matrix::uniform(5, 4, 1.0, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let got = matvec(&w, &x).unwrap();
        for (a, b) in got.iter().zip(triple_loop(&w, &x)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn matvec_dimension_mismatch() {
        assert!(matches!(
            matvec(&Matrix::zeros(2, 3), &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn transpose_and_outer_agree_with_definitions() {
        let mut rng = RngState::new(3);
        let w = Matrix::uniform(3, 4, 1.0, &mut rng);
        let y = [0.5, -1.0, 2.0];
        let mut out = vec![0.0; 4];
        w.matvec_t_acc(&y, &mut out);
        for j in 0..4 {
            let expect: f64 = (0..3).map(|i| w.get(i, j) * y[i]).sum();
            assert_abs_diff_eq!(out[j], expect, epsilon = 1e-14);
        }
        let mut m = Matrix::zeros(3, 4);
        m.outer_acc(&y, &out);
        assert_abs_diff_eq!(m.get(2, 1), y[2] * out[1], epsilon = 1e-14);
    }

    #[test]
    fn logsumexp_cases() {
        assert_abs_diff_eq!(logsumexp(&[0.0, 0.0]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(logsumexp(&[-3.25]).unwrap(), -3.25);
        assert!(matches!(logsumexp(&[]), Err(Error::Empty(_))));
        // Shifted direct evaluation: exp(1000 - 1000) terms are exact.
        let shifted: f64 = 1000.0 + (1.0f64 + 1.0).ln();
        let got = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!(got.is_finite());
        assert_abs_diff_eq!(got, shifted, epsilon = 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut p = vec![0.3, -1.0, 2.0];
        for _ in 0..25 {
            state.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.0, 2.0]);
        assert_eq!(state.t, 25);
    }

    #[test]
    fn adam_first_step_closed_form() {
        for g in [0.37, -12.0, 1e-3] {
            let (p, st) = adam_step(&[1.0], &[g], AdamState::new(1, AdamConfig::default())).unwrap();
            // m̂ = g, v̂ = g², step = lr·g/(|g| + ε)
            let expect = 1.0 - 0.001 * g / (g.abs() + 1e-8);
            assert_abs_diff_eq!(p[0], expect, epsilon = 1e-15);
            assert_abs_diff_eq!(p[0] - 1.0, -0.001 * g.signum(), epsilon = 1e-8);
            assert_eq!(st.t, 1);
        }
    }

    /// Independently coded Adam (Kingma & Ba, Algorithm 1) on f(x) = x².
    fn reference_adam(x0: f64, steps: usize, lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut x) = (0.0, 0.0, x0);
        let mut xs = vec![];
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            xs.push(x);
        }
        xs
    }

    #[test]
    fn adam_matches_reference_on_quadratic() {
        let reference = reference_adam(1.0, 10, 0.001);
        let mut state = AdamState::new(1, AdamConfig::with_learning_rate(0.001));
        let mut x = vec![1.0];
        for expect in reference {
            let g = [2.0 * x[0]];
            state.step(&mut x, &g).unwrap();
            assert_abs_diff_eq!(x[0], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        assert!(state.step(&mut p, &[1.0]).is_err());
        assert!(matches!(
            state.step(&mut p, &[1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(state.t, 0);
    }

    #[test]
    fn gaussian_sampling_contract() {
        let mut rng = RngState::new(1);
        assert_eq!(gaussian_sample(&mut rng, 2.5, 0.0).unwrap(), 2.5);
        assert!(gaussian_sample(&mut rng, 0.0, -1.0).is_err());

        let draw = |seed| {
            let mut r = RngState::new(seed);
            (0..16)
                .map(|_| gaussian_sample(&mut r, 0.0, 1.0).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = RngState::new(2024);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| gaussian_sample(&mut rng, 0.0, 1.0).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn clip_scales_to_threshold() {
        let mut g = vec![3.0, 4.0];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert_abs_diff_eq!(norm_sq(&g).sqrt(), 1.0, epsilon = 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    proptest! {
        #[test]
        fn logsumexp_bounds(xs in proptest::collection::vec(-500.0f64..500.0, 1..20)) {
            let lse = logsumexp(&xs).unwrap();
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max - 1e-12);
            prop_assert!(lse <= max + (xs.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn matvec_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = RngState::new(seed);
            let w = Matrix::uniform(4, 5, 1.0, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let comb: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = matvec(&w, &comb).unwrap();
            let wx = matvec(&w, &x).unwrap();
            let wy = matvec(&w, &y).unwrap();
            for i in 0..4 {
                prop_assert!((lhs[i] - (a * wx[i] + b * wy[i])).abs() < 1e-12);
            }
        }
    }
}
