//! Named parameter stores and their binding into an autodiff [`Graph`].

use std::collections::HashMap;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered collection of named tensors. Insertion order is the canonical
/// order used by checkpoints, optimizers and gradient vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        match self.index.get(name) {
            Some(&i) => &self.tensors[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        match self.index.get(name) {
            Some(&i) => &mut self.tensors[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Copies every tensor of `other` whose name also exists here.
    /// Shapes must agree.
    pub fn copy_matching(&mut self, other: &Params) -> Result<()> {
        for (name, t) in other.iter() {
            if let Some(i) = self.position(name) {
                t.same_shape(&self.tensors[i], name)?;
                self.tensors[i] = t.clone();
            }
        }
        Ok(())
    }

    /// Replace contents with `other`, which must have identical names and shapes.
    pub fn assign(&mut self, other: &Params) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ShapeMismatch(
                "parameter sets have different names".into(),
            ));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            b.same_shape(a, "parameter")?;
            *a = b.clone();
        }
        Ok(())
    }

    /// Places every tensor on the tape. Trainable stores become gradient
    /// leaves; frozen ones become constants.
    pub fn bind<'p>(&'p self, graph: &mut Graph, trainable: bool) -> Bound<'p> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound { params: self, vars }
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }
}

/// A parameter store placed on a particular graph.
#[derive(Debug)]
pub struct Bound<'p> {
    params: &'p Params,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Var {
        match self.params.position(name) {
            Some(i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    /// Gradients aligned with the store's canonical order; parameters the
    /// loss does not depend on get zero tensors.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

/// Elementwise accumulation `acc += g` over aligned gradient vectors.
pub fn accumulate(acc: &mut [Tensor], g: &[Tensor]) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.add_assign(b);
    }
}
