//! Dense row-major tensors and the flat parameter store shared by all models.

use rand::Rng;

use crate::error::{Error, Result};

/// A dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: true,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: true,
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn uniform_fan_in(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor {
            shape,
            data,
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }
}

/// Ordered collection of named parameter tensors. Indices into the store are
/// stable for the lifetime of a model and double as gradient slot ids. Each
/// collection carries a distinct id so tapes can tell two stores apart when a
/// training step touches more than one model.
#[derive(Debug, Clone)]
pub struct ParamVec {
    id: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamVec {
    fn default() -> Self {
        use std::sync::atomic::{AtomicU64, Ordering};
        static NEXT: AtomicU64 = AtomicU64::new(0);
        ParamVec {
            id: NEXT.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl ParamVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }
}

/// Per-parameter gradient accumulation buffers, parallel to a [`ParamVec`].
#[derive(Debug, Clone)]
pub struct Grads {
    buffers: Vec<Vec<f64>>,
}

impl Grads {
    pub fn new(params: &ParamVec) -> Self {
        Grads {
            buffers: (0..params.len())
                .map(|i| vec![0.0; params.get(i).len()])
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.buffers[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.buffers[idx]
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.buffers
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum()
    }

    pub fn scale_all(&mut self, s: f64) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// Rescale all gradients so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.norm_squared().sqrt();
        if norm > max_norm && norm > 0.0 {
            self.scale_all(max_norm / norm);
        }
    }
}

/// Clip several gradient groups against one shared global-norm budget.
pub fn clip_joint_global_norm(groups: &mut [&mut Grads], max_norm: f64) {
    let norm: f64 = groups.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in groups.iter_mut() {
            g.scale_all(s);
        }
    }
}
