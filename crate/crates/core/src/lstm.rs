//! Multi-layer LSTM with hand-derived forward and backward passes.
//!
//! Gate rows are stacked in the order (input `i`, forget `f`, cell
//! candidate `g`, output `o`), each block `H` rows tall:
//!
//! ```text
//! a = W·x + U·h_prev + b
//! i = σ(a_i)  f = σ(a_f)  g = tanh(a_g)  o = σ(a_o)
//! c = f⊙c_prev + i⊙g
//! h = o⊙tanh(c)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, Matrix, Params, RngState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// Input-to-gates, `4H × D`.
    pub w: Matrix,
    /// Hidden-to-gates, `4H × H`.
    pub u: Matrix,
    /// Gate biases, `4H`.
    pub b: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * hidden, input_size),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform `[-1/√H, 1/√H]` weights, forget-gate bias 1, other biases 0.
    pub fn init(input_size: usize, hidden: usize, rng: &mut RngState) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let w = Matrix::uniform(4 * hidden, input_size, scale, rng);
        let u = Matrix::uniform(4 * hidden, hidden, scale, rng);
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        Self { w, u, b }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.rows() != 4 * h {
            return Err(Error::dim("lstm U rows", 4 * h, self.u.rows()));
        }
        if self.w.rows() != 4 * h {
            return Err(Error::dim("lstm W rows", 4 * h, self.w.rows()));
        }
        if self.b.len() != 4 * h {
            return Err(Error::dim("lstm bias", 4 * h, self.b.len()));
        }
        Ok(())
    }
}

impl Params for LstmLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.as_slice());
        f(self.u.as_slice());
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(self.u.as_mut_slice());
        f(&mut self.b);
    }
}

/// Hidden and cell vectors of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LayerState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

/// Values from one `cell_forward` needed by `cell_backward`.
#[derive(Clone, Debug)]
pub struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `(i, f, g, o)`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl CellCache {
    pub fn gates(&self) -> &[f64] {
        &self.gates
    }
}

#[derive(Clone, Debug)]
pub struct CellGrads {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

pub fn cell_forward(x: &[f64], prev: &LayerState, w: &LstmLayer) -> Result<(LayerState, CellCache)> {
    w.check()?;
    let hs = w.hidden();
    if x.len() != w.input_size() {
        return Err(Error::dim("lstm cell input", w.input_size(), x.len()));
    }
    if prev.h.len() != hs || prev.c.len() != hs {
        return Err(Error::dim("lstm previous state", hs, prev.h.len().max(prev.c.len())));
    }

    let mut gates = w.b.clone();
    w.w.matvec_acc(x, &mut gates);
    w.u.matvec_acc(&prev.h, &mut gates);
    for (k, a) in gates.iter_mut().enumerate() {
        *a = if (2 * hs..3 * hs).contains(&k) {
            a.tanh()
        } else {
            sigmoid(*a)
        };
    }

    let mut c = vec![0.0; hs];
    let mut h = vec![0.0; hs];
    let mut tanh_c = vec![0.0; hs];
    for j in 0..hs {
        let (i, f, g, o) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
        c[j] = f * prev.c[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }

    let cache = CellCache {
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        gates,
        tanh_c,
    };
    Ok((LayerState { h, c }, cache))
}

/// Backward pass through one cell. Weight gradients are accumulated into
/// `grads`; gradients with respect to the cell inputs are returned.
pub fn cell_backward(
    grad_h: &[f64],
    grad_c: &[f64],
    cache: &CellCache,
    w: &LstmLayer,
    grads: &mut LstmLayer,
) -> Result<CellGrads> {
    let hs = w.hidden();
    if cache.x.len() != w.input_size() || cache.h_prev.len() != hs || cache.gates.len() != 4 * hs {
        return Err(Error::StaleCache("lstm cell cache does not match layer shape"));
    }
    if grad_h.len() != hs || grad_c.len() != hs {
        return Err(Error::dim("lstm upstream gradient", hs, grad_h.len().min(grad_c.len())));
    }
    if !grads.w.same_shape(&w.w) || !grads.u.same_shape(&w.u) {
        return Err(Error::dim("lstm gradient buffer", w.w.rows(), grads.w.rows()));
    }

    let g = &cache.gates;
    let mut da = vec![0.0; 4 * hs];
    let mut dc_prev = vec![0.0; hs];
    for j in 0..hs {
        let (i, f, gc, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
        let tc = cache.tanh_c[j];
        let dout = grad_h[j] * tc;
        let dc = grad_c[j] + grad_h[j] * o * (1.0 - tc * tc);
        da[j] = dc * gc * i * (1.0 - i);
        da[hs + j] = dc * cache.c_prev[j] * f * (1.0 - f);
        da[2 * hs + j] = dc * i * (1.0 - gc * gc);
        da[3 * hs + j] = dout * o * (1.0 - o);
        dc_prev[j] = dc * f;
    }

    grads.w.outer_acc(&da, &cache.x);
    grads.u.outer_acc(&da, &cache.h_prev);
    for (gb, d) in grads.b.iter_mut().zip(&da) {
        *gb += d;
    }

    let mut dx = vec![0.0; w.input_size()];
    w.w.matvec_t_acc(&da, &mut dx);
    let mut dh_prev = vec![0.0; hs];
    w.u.matvec_t_acc(&da, &mut dh_prev);
    Ok(CellGrads {
        x: dx,
        h_prev: dh_prev,
        c_prev: dc_prev,
    })
}

/// Layer-by-layer caches of one time step, bottom layer first.
pub type StepCache = Vec<CellCache>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn new(layers: Vec<LstmLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("lstm stack"));
        }
        for pair in layers.windows(2) {
            if pair[1].input_size() != pair[0].hidden() {
                return Err(Error::dim(
                    "lstm layer chain",
                    pair[0].hidden(),
                    pair[1].input_size(),
                ));
            }
        }
        for l in &layers {
            l.check()?;
        }
        Ok(Self { layers })
    }

    pub fn init(input_size: usize, hidden: usize, depth: usize, rng: &mut RngState) -> Self {
        let layers = (0..depth)
            .map(|k| LstmLayer::init(if k == 0 { input_size } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer::zeros(l.input_size(), l.hidden()))
                .collect(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(LstmLayer::hidden).unwrap_or(0)
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            layers: self.layers.iter().map(|l| LayerState::zeros(l.hidden())).collect(),
        }
    }

    /// One time step through every layer. `state` is advanced in place.
    pub fn forward(&self, x: &[f64], state: &mut LstmState) -> Result<(Vec<f64>, StepCache)> {
        if state.layers.len() != self.layers.len() {
            return Err(Error::dim("lstm state layers", self.layers.len(), state.layers.len()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (layer, ls) in self.layers.iter().zip(state.layers.iter_mut()) {
            let (next, cache) = cell_forward(&input, ls, layer)?;
            input.clone_from(&next.h);
            *ls = next;
            caches.push(cache);
        }
        Ok((input, caches))
    }

    /// Reverse-mode accumulation over a full unroll.
    ///
    /// `step_grads[t]` is the loss gradient with respect to the top hidden
    /// vector at step `t`. Weight gradients are added to `grads`; the
    /// gradient with respect to the initial state is returned.
    pub fn backward_through_time(
        &self,
        step_grads: &[Vec<f64>],
        caches: &[StepCache],
        grads: &mut LstmStack,
    ) -> Result<LstmState> {
        if step_grads.len() != caches.len() {
            return Err(Error::dim("bptt step count", caches.len(), step_grads.len()));
        }
        let depth = self.layers.len();
        let top = depth - 1;
        let mut carry = self.zero_state();
        for (grad_top, step) in step_grads.iter().zip(caches).rev() {
            if step.len() != depth {
                return Err(Error::StaleCache("step cache depth does not match stack"));
            }
            let mut from_above: Option<Vec<f64>> = None;
            for l in (0..depth).rev() {
                let mut dh = carry.layers[l].h.clone();
                let upstream = if l == top {
                    grad_top.as_slice()
                } else {
                    from_above.as_deref().unwrap_or(&[])
                };
                if upstream.len() != dh.len() {
                    return Err(Error::dim("bptt upstream gradient", dh.len(), upstream.len()));
                }
                dh.iter_mut().zip(upstream).for_each(|(a, b)| *a += b);
                let cg = cell_backward(&dh, &carry.layers[l].c, &step[l], &self.layers[l], &mut grads.layers[l])?;
                carry.layers[l] = LayerState {
                    h: cg.h_prev,
                    c: cg.c_prev,
                };
                from_above = Some(cg.x);
            }
        }
        Ok(carry)
    }
}

impl Params for LstmStack {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.layers.iter().for_each(|l| l.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}
