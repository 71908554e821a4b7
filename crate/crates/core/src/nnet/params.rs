use crate::error::{invalid, Result};

/// Location of a named block inside a [`ParamVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceRef {
    pub offset: usize,
    pub len: usize,
}

impl SliceRef {
    #[inline]
    pub fn of<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a>(&self, v: &'a mut [f64]) -> &'a mut [f64] {
        &mut v[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_ref(&self) -> SliceRef {
        SliceRef {
            offset: self.offset,
            len: self.len(),
        }
    }
}

/// Flat parameter store with a same-length gradient accumulator.
///
/// Slices are appended in order, so they are disjoint and cover the vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    grad: Vec<f64>,
    layout: Vec<Slice>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialized slice. Names must be unique.
    pub fn add_slice(&mut self, name: &str, shape: &[usize]) -> Result<SliceRef> {
        if self.layout.iter().any(|s| s.name == name) {
            return invalid(format!("duplicate parameter slice '{name}'"));
        }
        let slice = Slice {
            name: name.to_string(),
            offset: self.values.len(),
            shape: shape.to_vec(),
        };
        let r = slice.as_ref();
        self.values.resize(self.values.len() + r.len, 0.0);
        self.grad.resize(self.values.len(), 0.0);
        self.layout.push(slice);
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[Slice] {
        &self.layout
    }

    pub fn slice(&self, name: &str) -> Option<&Slice> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Simultaneous access to values (read) and gradient (write).
    pub fn split_mut(&mut self) -> (&[f64], &mut [f64]) {
        (&self.values, &mut self.grad)
    }

    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return invalid(format!("expected {} parameter values, got {}", self.values.len(), values.len()));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// Adds `scale * other` into the gradient.
    pub fn add_to_grad(&mut self, other: &[f64], scale: f64) -> Result<()> {
        if other.len() != self.grad.len() {
            return invalid("gradient length mismatch");
        }
        for (g, o) in self.grad.iter_mut().zip(other) {
            *g += scale * o;
        }
        Ok(())
    }

    /// Rebuilds a vector from an explicit layout and values (checkpoint reader).
    pub(crate) fn from_parts(layout: Vec<Slice>, values: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for s in &layout {
            if s.offset != offset {
                return invalid(format!("slice '{}' is not contiguous", s.name));
            }
            offset += s.len();
        }
        if offset != values.len() {
            return invalid("layout does not cover the value vector");
        }
        let grad = vec![0.0; values.len()];
        Ok(Self { values, grad, layout })
    }
}
