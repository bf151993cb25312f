//! Named parameter tensors shared by both prior families.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{DiffError, Gradients, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for every parameter of a store, indexed by [`ParamId`].
pub struct BoundParams(Vec<Var>);

impl std::ops::Index<ParamId> for BoundParams {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Register every parameter as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundParams, DiffError> {
        self.tensors.iter().map(|t| g.input(t.clone())).collect::<Result<_, _>>().map(BoundParams)
    }

    /// Register every parameter as a constant (evaluation only).
    pub fn bind_const(&self, g: &mut Graph) -> Result<BoundParams, DiffError> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect::<Result<_, _>>().map(BoundParams)
    }

    /// Collect parameter gradients in store order.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &mut Gradients) -> Vec<Tensor> {
        bound.0.iter().map(|&v| grads.take(v)).collect()
    }

    /// Replace tensors by name. Every name must exist with a matching shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if other.len() != self.len() {
            return Err(format!("expected {} parameter arrays, found {}", self.len(), other.len()));
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = other
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| format!("parameter {name} missing"))?;
            if other.tensors[j].shape() != self.tensors[i].shape() {
                return Err(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    other.tensors[j].shape(),
                    self.tensors[i].shape()
                ));
            }
            self.tensors[i] = other.tensors[j].clone();
        }
        Ok(())
    }
}

/// Gaussian weights scaled by `1/sqrt(fan_in)`.
pub(crate) fn init_weight<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let std = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect::<Vec<f64>>();
    Tensor::new(rows, cols, data).expect("shape")
}
