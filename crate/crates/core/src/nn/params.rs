use std::collections::HashMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{config_err, usage_err, Result};
use crate::tensor::Tensor;

/// Ordered, uniquely named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Tape handles for every parameter of a [`ParameterSet`], in set order.
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| config_err!("no parameter named {name:?}"))
    }

    /// The standby scalar, if the bound set has one.
    pub fn optional(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; it is marked `requires_grad`.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name:?}"));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a borrowed leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t)).collect(),
            index: self.index.clone(),
        }
    }

    /// Moves the gradients of the bound leaves into the parameters' grad
    /// buffers (accumulating onto any that are already present).
    pub fn absorb(&mut self, grads: &mut Gradients, bound: &Bound) -> Result<()> {
        if bound.vars.len() != self.tensors.len() {
            return Err(usage_err!("bound handles do not belong to this parameter set"));
        }
        for ((tensor, &var), name) in self.tensors.iter_mut().zip(&bound.vars).zip(&self.names) {
            let g = grads
                .take(var)
                .ok_or_else(|| usage_err!("no gradient recorded for {name:?}"))?;
            tensor.accumulate_grad_owned(g)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_params_require_grad() {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[1]).unwrap()).is_err());
        assert!(p.get("a").unwrap().requires_grad());
        assert_eq!(p.num_scalars(), 2);
    }

    #[test]
    fn bind_backward_absorb() {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let mut grads;
        let bound;
        {
            let mut tape = Tape::new();
            bound = p.bind(&mut tape);
            let x = bound.get("x").unwrap();
            let y = tape.mul(x, x).unwrap();
            let s = tape.sum(y).unwrap();
            grads = tape.backward(s).unwrap();
        }
        p.absorb(&mut grads, &bound).unwrap();
        assert_eq!(p.get("x").unwrap().grad(), Some(&[2.0, 4.0][..]));
    }
}
