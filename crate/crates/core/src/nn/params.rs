use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Flat registry of every parameter in a network, addressed by id or name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if value.len() != expected {
            return Err(Error::Shape(format!(
                "parameter {name}: shape {shape:?} needs {expected} values, got {}",
                value.len()
            )));
        }
        if self.by_name.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            shape: shape.to_vec(),
            grad: vec![0.0; value.len()],
            value,
        });
        Ok(id)
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation.
    pub fn add_fan_in<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        p.grad.iter_mut().zip(grad).for_each(|(g, d)| *g += d);
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Rounds every value to the nearest `f32`, matching what a checkpoint
    /// round trip produces.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.value.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add_zeros("a", &[2, 2]).unwrap();
        assert!(store.add_zeros("a", &[1]).is_err());
        assert!(store.add("b", &[3], vec![0.0; 2]).is_err());
        assert_eq!(store.num_scalars(), 4);
    }
}
