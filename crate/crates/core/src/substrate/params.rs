use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Array, Gradients, Graph, Real, Var};

/// Named, ordered model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter and returns its slot. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    /// Registers a parameter drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Array::from_vec(shape, data).unwrap())
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> usize {
        self.add(name, Array::full(shape, T::from_f64_lossy(value)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array<T>] {
        &self.values
    }

    pub fn get(&self, i: usize) -> &Array<T> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array<T> {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Adds every parameter to `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.values.iter().map(|v| g.param(v.clone())).collect()
    }

    /// Adds every parameter to `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.values.iter().map(|v| g.input(v.clone())).collect()
    }

    /// Gradients of the bound parameters, zeros where none flowed.
    pub fn collect_grads(&self, grads: &Gradients<T>, vars: &[Var]) -> Vec<Array<T>> {
        self.values
            .iter()
            .zip(vars)
            .map(|(v, &var)| {
                grads
                    .get(var)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(v.shape()))
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }

    /// Overwrites values by name; shapes must match.
    pub fn load(&mut self, records: &[(String, Array<T>)]) -> Result<()> {
        for (name, value) in records {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::Data(format!("unknown parameter {name}")))?;
            if self.values[i].shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name}: stored shape {:?}, model expects {:?}",
                    value.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = value.clone();
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}
