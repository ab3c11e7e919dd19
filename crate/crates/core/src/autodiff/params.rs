use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub(crate) value: Arc<Tensor<T>>,
    /// `None` until a backward pass reaches the parameter.
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Parameter<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    /// Mutable access; copies only if a live tape still shares the value.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateId(name.to_owned()));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_owned(),
            value: Arc::new(value),
            grad: None,
        });
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[T]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => {
                p.grad = Some(Tensor::new(p.value.shape(), g.to_vec()).expect("grad matches parameter shape"));
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().find(|p| !p.value.is_finite()) {
            Some(p) => Err(Error::NonFinite(format!("parameter {}", p.name))),
            None => Ok(()),
        }
    }

    /// Same names and shapes, values converted.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for p in &self.params {
            out.add(&p.name, p.value.cast()).expect("names already unique");
        }
        out
    }
}
