use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::scalar::Real;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    /// Optimizer group (selects the learning rate).
    pub group: usize,
    pub tensor: Tensor<T>,
}

/// Named, grouped collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, group: usize, tensor: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar values, optionally restricted to one group.
    pub fn count(&self, group: Option<usize>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Registers every parameter as a borrowed leaf; result is indexed by
    /// [`ParamId`].
    pub fn attach<'a>(&'a self, graph: &mut Graph<'a, T>) -> Vec<Var> {
        self.params.iter().map(|p| graph.param(&p.tensor)).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    pub fn from_params(params: Vec<Param<T>>) -> Self {
        Self { params }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape().to_vec()))
            .collect()
    }
}
