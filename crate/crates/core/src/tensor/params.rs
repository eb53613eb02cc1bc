use alloc::collections::BTreeMap;
use alloc::string::String;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.data().len()).sum()
    }

    /// Order-sensitive checksum over names and bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (name, t) in &self.tensors {
            name.bytes().for_each(|b| feed(b as u64));
            t.data().iter().for_each(|v| feed(v.to_bits()));
        }
        h
    }

    /// Records every tensor as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Records every tensor as a constant, for inference.
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Parameters recorded on a particular tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Panics if `name` was not registered; parameter sets are built together
    /// with the forward pass that uses them.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// `uniform(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}
