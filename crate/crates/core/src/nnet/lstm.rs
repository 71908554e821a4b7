use super::activations::sigmoid;
use super::params::{ParamVector, SliceRef};
use crate::error::{invalid, Result};
use crate::prng::RngStream;

/// Hidden and cell vectors of one LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.h.len()
    }
}

/// Forward values kept for the backward pass of one step.
#[derive(Clone, Debug)]
pub struct LstmCache {
    /// `[x, h_prev]`
    pub input: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates laid out as `[i, f, g, o]`, each of length `hidden`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Single-layer LSTM cell. Weights are one `4H x (I + H)` block acting on
/// `[x, h_prev]`, gate order input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w: SliceRef,
    pub b: SliceRef,
    pub n_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(params: &mut ParamVector, name: &str, n_in: usize, hidden: usize) -> Result<Self> {
        let w = params.add_slice(&format!("{name}.w"), &[4 * hidden, n_in + hidden])?;
        let b = params.add_slice(&format!("{name}.b"), &[4 * hidden])?;
        Ok(Self { w, b, n_in, hidden })
    }

    pub fn init(&self, values: &mut [f64], rng: &mut RngStream) {
        let bound = 1.0 / ((self.n_in + self.hidden) as f64).sqrt();
        for w in self.w.of_mut(values) {
            *w = bound * (2.0 * rng.uniform01() - 1.0);
        }
        self.b.of_mut(values).iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn step(&self, params: &[f64], state: &LstmState, x: &[f64]) -> Result<(LstmState, LstmCache)> {
        if x.len() != self.n_in {
            return invalid(format!("lstm: expected input of length {}, got {}", self.n_in, x.len()));
        }
        if state.h.len() != self.hidden || state.c.len() != self.hidden {
            return invalid(format!("lstm: expected state of size {}", self.hidden));
        }
        Ok(self.step_unchecked(params, state, x))
    }

    pub fn step_unchecked(&self, params: &[f64], state: &LstmState, x: &[f64]) -> (LstmState, LstmCache) {
        let hd = self.hidden;
        let width = self.n_in + hd;
        let mut input = Vec::with_capacity(width);
        input.extend_from_slice(x);
        input.extend_from_slice(&state.h);

        let w = self.w.of(params);
        let b = self.b.of(params);
        let mut gates = vec![0.0; 4 * hd];
        for (gi, (row, bias)) in gates.iter_mut().zip(w.chunks_exact(width).zip(b)) {
            *gi = bias + row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
        }
        for (j, g) in gates.iter_mut().enumerate() {
            *g = if j / hd == 2 { g.tanh() } else { sigmoid(*g) };
        }

        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * state.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        let cache = LstmCache {
            input,
            c_prev: state.c.clone(),
            gates,
            tanh_c,
        };
        (LstmState { h, c }, cache)
    }

    /// Backward through one step given gradients w.r.t. the new `h` and `c`.
    /// Accumulates into `grad`; overwrites `dh_prev`, `dc_prev` and, when
    /// given, `dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut [f64],
        dh_prev: &mut [f64],
        dc_prev: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let hd = self.hidden;
        let width = self.n_in + hd;
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * hd];
        for j in 0..hd {
            let (i, f, cg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = cache.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            da[j] = dct * cg * i * (1.0 - i);
            da[hd + j] = dct * cache.c_prev[j] * f * (1.0 - f);
            da[2 * hd + j] = dct * i * (1.0 - cg * cg);
            da[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dct * f;
        }

        let w = self.w.of(params);
        let mut d_input = vec![0.0; width];
        {
            let gw = self.w.of_mut(grad);
            for (r, &d) in da.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let grow = &mut gw[r * width..(r + 1) * width];
                for (gv, iv) in grow.iter_mut().zip(&cache.input) {
                    *gv += d * iv;
                }
                let wrow = &w[r * width..(r + 1) * width];
                for (dv, wv) in d_input.iter_mut().zip(wrow) {
                    *dv += d * wv;
                }
            }
        }
        for (gb, d) in self.b.of_mut(grad).iter_mut().zip(&da) {
            *gb += d;
        }
        dh_prev.copy_from_slice(&d_input[self.n_in..]);
        if let Some(dx) = dx {
            dx.copy_from_slice(&d_input[..self.n_in]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_halve_cell() {
        let mut p = ParamVector::new();
        let l = Lstm::new(&mut p, "lstm", 2, 3).unwrap();
        let state = LstmState {
            h: vec![0.1, -0.4, 0.7],
            c: vec![1.0, -2.0, 0.5],
        };
        let (next, _) = l.step(p.values(), &state, &[0.3, 0.9]).unwrap();
        for j in 0..3 {
            let c = 0.5 * state.c[j];
            assert!((next.c[j] - c).abs() < 1e-15);
            assert!((next.h[j] - 0.5 * c.tanh()).abs() < 1e-15);
        }
        let (z, _) = l.step(p.values(), &LstmState::zeros(3), &[0.0, 0.0]).unwrap();
        assert_eq!(z.h, vec![0.0; 3]);
        assert!(l.step(p.values(), &LstmState::zeros(2), &[0.0, 0.0]).is_err());
    }
}
