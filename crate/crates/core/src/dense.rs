use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Params, RngState};

/// Affine map `y = W·x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut RngState) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        Self {
            w: Matrix::uniform(output, input, scale, rng),
            b: vec![0.0; output],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::dim("linear input", self.input_size(), x.len()));
        }
        let mut y = self.b.clone();
        self.w.matvec_acc(x, &mut y);
        Ok(y)
    }

    /// Accumulates weight gradients for upstream `dy` at input `x` and
    /// returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear) -> Vec<f64> {
        grads.w.outer_acc(dy, x);
        grads.b.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        let mut dx = vec![0.0; self.input_size()];
        self.w.matvec_t_acc(dy, &mut dx);
        dx
    }
}

impl Params for Linear {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.as_slice());
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(&mut self.b);
    }
}
