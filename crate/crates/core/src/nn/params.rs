use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Named dense tensors in a fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn by_name(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.values[self.id(name)?])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
