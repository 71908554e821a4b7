use super::dense::Dense;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Entry {
    Dense { layer: Dense, input: Vec<f64> },
    Tanh { output: Vec<f64> },
    Sigmoid { output: Vec<f64> },
}

/// Records a feed-forward chain so gradients can be pulled back through it.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn dense(&mut self, layer: &Dense, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let y = layer.forward(params, x)?;
        self.entries.push(Entry::Dense {
            layer: layer.clone(),
            input: x.to_vec(),
        });
        Ok(y)
    }

    pub fn tanh(&mut self, x: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        self.entries.push(Entry::Tanh { output: y.clone() });
        y
    }

    pub fn sigmoid(&mut self, x: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = x.iter().map(|&v| super::activations::sigmoid(v)).collect();
        self.entries.push(Entry::Sigmoid { output: y.clone() });
        y
    }

    /// Pulls `d_out` back through every recorded op in reverse, accumulating
    /// parameter gradients into `grad`. Returns the gradient w.r.t. the
    /// chain's first input. The tape is left intact so it can be replayed
    /// with other output gradients.
    pub fn backward(&self, params: &[f64], d_out: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if self.entries.is_empty() {
            return Err(Error::State("backward called before any forward op was recorded".into()));
        }
        let mut d = d_out.to_vec();
        for entry in self.entries.iter().rev() {
            match entry {
                Entry::Dense { layer, input } => {
                    if d.len() != layer.n_out {
                        return Err(Error::InvalidArgument("output gradient has the wrong length".into()));
                    }
                    let mut dx = vec![0.0; layer.n_in];
                    layer.backward(params, input, &d, grad, Some(&mut dx));
                    d = dx;
                }
                Entry::Tanh { output } => {
                    for (g, y) in d.iter_mut().zip(output) {
                        *g *= 1.0 - y * y;
                    }
                }
                Entry::Sigmoid { output } => {
                    for (g, y) in d.iter_mut().zip(output) {
                        *g *= y * (1.0 - y);
                    }
                }
            }
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::ParamVector;

    #[test]
    fn backward_before_forward_is_an_error() {
        let tape = Tape::new();
        let mut g = vec![0.0; 4];
        assert!(matches!(tape.backward(&[0.0; 4], &[1.0], &mut g), Err(Error::State(_))));
    }

    #[test]
    fn replay_accumulates() {
        let mut p = ParamVector::new();
        let d = Dense::new(&mut p, "l", 1, 1).unwrap();
        p.values_mut()[d.w.offset] = 2.0;
        let mut tape = Tape::new();
        let y = tape.dense(&d, p.values(), &[3.0]).unwrap();
        assert_eq!(y, vec![6.0]);
        let (v, g) = p.split_mut();
        let dx = tape.backward(v, &[1.0], g).unwrap();
        assert_eq!(dx, vec![2.0]);
        assert_eq!(p.grad(), &[3.0, 1.0]);
    }
}
