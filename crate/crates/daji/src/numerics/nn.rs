//! Named parameter storage and small network-building helpers shared by
//! the teacher, Act, Flow and evaluator models.

use serde::{Deserialize, Serialize};

use super::{Array, Gradients, RngStream, Tape, Tensor};

/// Ordered name -> tensor map. Order is the optimizer/checkpoint order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter `{name}`");
        self.names.push(name.to_string());
        self.arrays.push(value);
    }

    pub fn get(&self, name: &str) -> &Array {
        let i = self.index_of(name);
        &self.arrays[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        let i = self.index_of(name);
        &mut self.arrays[i]
    }

    fn index_of(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.names.iter().zip(self.arrays.iter())
    }

    pub fn total_len(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    /// Xavier-uniform `[fan_in, fan_out]` weight plus zero bias.
    pub fn insert_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.insert(&format!("{prefix}.w"), Array::new(vec![fan_in, fan_out], data));
        self.insert(&format!("{prefix}.b"), Array::zeros(vec![fan_out]));
    }

    pub fn insert_zero_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.insert(&format!("{prefix}.w"), Array::zeros(vec![fan_in, fan_out]));
        self.insert(&format!("{prefix}.b"), Array::zeros(vec![fan_out]));
    }
}

/// Parameters bound to a tape as leaves for one forward/backward pass.
pub struct BoundParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl BoundParams {
    pub fn bind(tape: &Tape, store: &ParamStore) -> Self {
        BoundParams {
            names: store.names.clone(),
            tensors: store.arrays.iter().map(|a| tape.leaf(a)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        &self.tensors[i]
    }

    /// Gradients in store order, zero-filled where the loss is independent.
    pub fn grads(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| grads.get_or_zero(t)).collect()
    }

    pub fn linear(&self, prefix: &str, x: &Tensor) -> Tensor {
        x.matmul(self.get(&format!("{prefix}.w"))).add(self.get(&format!("{prefix}.b")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Silu,
    Gelu,
    Tanh,
}

pub fn activate(x: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Elu => x.elu(),
        Activation::Silu => x.silu(),
        Activation::Gelu => x.gelu(),
        Activation::Tanh => x.tanh(),
    }
}

/// Registers an MLP `sizes[0] -> .. -> sizes.last()`.
pub fn insert_mlp(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut RngStream) {
    for i in 0..sizes.len() - 1 {
        store.insert_linear(&format!("{prefix}.{i}"), sizes[i], sizes[i + 1], rng);
    }
}

/// Applies an MLP with `act` between layers and a linear final layer.
pub fn apply_mlp(bp: &BoundParams, prefix: &str, x: &Tensor, layers: usize, act: Activation) -> Tensor {
    let mut h = x.clone();
    for i in 0..layers {
        h = bp.linear(&format!("{prefix}.{i}"), &h);
        if i + 1 < layers {
            h = activate(&h, act);
        }
    }
    h
}

/// Sinusoidal embedding of a scalar position into `dim` features.
pub fn sinusoidal_embedding(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}
