use super::params::{ParamVector, SliceRef};
use crate::error::{invalid, Result};
use crate::prng::RngStream;

/// Affine layer `y = W x + b` with `W` stored row-major as `n_out x n_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: SliceRef,
    pub b: SliceRef,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    /// Registers `<name>.w` and `<name>.b` in `params`.
    pub fn new(params: &mut ParamVector, name: &str, n_in: usize, n_out: usize) -> Result<Self> {
        let w = params.add_slice(&format!("{name}.w"), &[n_out, n_in])?;
        let b = params.add_slice(&format!("{name}.b"), &[n_out])?;
        Ok(Self { w, b, n_in, n_out })
    }

    /// Weights uniform in `±1/sqrt(n_in)`, biases zero.
    pub fn init(&self, values: &mut [f64], rng: &mut RngStream) {
        let bound = 1.0 / (self.n_in as f64).sqrt();
        for w in self.w.of_mut(values) {
            *w = bound * (2.0 * rng.uniform01() - 1.0);
        }
        self.b.of_mut(values).iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            return invalid(format!("dense: expected input of length {}, got {}", self.n_in, x.len()));
        }
        if params.len() < self.b.offset + self.b.len || params.len() < self.w.offset + self.w.len {
            return invalid("dense: parameter vector too short for layer");
        }
        let mut out = vec![0.0; self.n_out];
        self.forward_into(params, x, &mut out);
        Ok(out)
    }

    #[inline]
    pub fn forward_into(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        debug_assert_eq!(out.len(), self.n_out);
        let w = self.w.of(params);
        let b = self.b.of(params);
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(self.n_in).zip(b)) {
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients for upstream gradient `d_out`;
    /// optionally writes (overwrites) the input gradient into `d_x`.
    pub fn backward(&self, params: &[f64], x: &[f64], d_out: &[f64], grad: &mut [f64], d_x: Option<&mut [f64]>) {
        debug_assert_eq!(d_out.len(), self.n_out);
        {
            let gw = self.w.of_mut(grad);
            for (row, &d) in gw.chunks_exact_mut(self.n_in).zip(d_out) {
                if d != 0.0 {
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
        }
        for (g, d) in self.b.of_mut(grad).iter_mut().zip(d_out) {
            *g += d;
        }
        if let Some(dx) = d_x {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = self.w.of(params);
            for (row, &d) in w.chunks_exact(self.n_in).zip(d_out) {
                if d != 0.0 {
                    for (v, wi) in dx.iter_mut().zip(row) {
                        *v += d * wi;
                    }
                }
            }
        }
    }
}
