use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Real, Result};
#[allow(unused_imports)]
use num_traits::Float as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
    /// Whether decoupled weight decay applies. Off for biases, norms and
    /// state matrices.
    pub weight_decay: bool,
}

/// Named parameters in registration order, with gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a trainable parameter. Weight decay defaults to on for
    /// tensors of rank two or more.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let decay = value.rank() >= 2;
        self.add_with(name, value, true, decay)
    }

    pub fn add_with(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
        weight_decay: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let grad = vec![T::zero(); value.numel()];
        self.params.push(Param { name, value, grad, trainable, weight_decay });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[T]) -> Result<()> {
        let p = &mut self.params[id.0];
        if g.len() != p.grad.len() {
            return Err(Error::dim("accumulate_grad", format!("{} vs {}", g.len(), p.grad.len())));
        }
        for (a, &b) in p.grad.iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    /// Global L2 norm of all trainable gradients.
    pub fn grad_norm(&self) -> T {
        let mut acc = 0.0f64;
        for p in self.params.iter().filter(|p| p.trainable) {
            for g in &p.grad {
                let g = g.as_f64();
                acc += g * g;
            }
        }
        T::lit(acc.sqrt())
    }

    /// Replaces a parameter value, keeping the shape fixed.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(
                "set_value",
                format!("{}: {:?} vs {:?}", p.name, value.shape(), p.value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: vec![U::zero(); p.grad.len()],
                    trainable: p.trainable,
                    weight_decay: p.weight_decay,
                })
                .collect(),
        }
    }
}
