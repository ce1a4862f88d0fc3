use std::collections::HashMap;

use super::{NumError, Result, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient slot.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Biases are excluded from weight decay.
    decays: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn decays(&self) -> bool {
        self.decays
    }
}

/// Owner of every parameter of a model. Subnetworks refer to parameters by
/// [`ParamId`]; two subnetworks holding the same id share the parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a weight (subject to weight decay).
    pub fn add_weight(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.add(name.into(), value, true)
    }

    /// Registers a bias (exempt from weight decay).
    pub fn add_bias(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.add(name.into(), value, false)
    }

    fn add(&mut self, name: String, value: Tensor, decays: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(NumError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            decays,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a gradient set produced by one tape into the parameter slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        self.accumulate_scaled(grads, 1.0);
    }

    pub fn accumulate_scaled(&mut self, grads: &Gradients, factor: f64) {
        for (idx, grad) in grads.iter() {
            let slot = &mut self.params[idx.0].grad;
            if factor == 1.0 {
                slot.add_assign(grad);
            } else {
                for (a, b) in slot.data_mut().iter_mut().zip(grad.data()) {
                    *a += factor * b;
                }
            }
        }
    }

    /// Euclidean norm of the concatenation of the selected gradients.
    pub fn grad_norm<'a>(&self, ids: impl IntoIterator<Item = &'a ParamId>) -> f64 {
        ids.into_iter()
            .map(|id| self.params[id.0].grad.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Copies of every value, in id order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Restores values captured by [`ParamStore::snapshot`].
    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(NumError::ShapeMismatch {
                op: "restore",
                lhs: vec![self.params.len()],
                rhs: vec![values.len()],
            });
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "restore",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Sparse set of parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn with_capacity(len: usize) -> Self {
        Gradients {
            slots: vec![None; len],
        }
    }

    pub(crate) fn add(&mut self, id: ParamId, grad: &Tensor) {
        if id.0 >= self.slots.len() {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(existing) => existing.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Merges `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            self.add(id, g);
        }
    }
}
