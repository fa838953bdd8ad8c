//! Named, identified parameter storage.
//!
//! Ids are dense indices assigned in registration order, and every consumer
//! (optimizer steps, checkpoints, gradient maps) iterates in ascending id
//! order. That single rule is what makes training trajectories bitwise
//! reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub u32);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub id: ParamId,
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
    /// Per-parameter multiplier on the optimizer's learning rate; 1.0 for
    /// everything except groups explicitly configured to learn slower.
    pub lr_scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(&mut self, name: &str, value: Matrix, trainable: bool) -> ParamId {
        self.register_scaled(name, value, trainable, 1.0)
    }

    pub fn register_scaled(
        &mut self,
        name: &str,
        value: Matrix,
        trainable: bool,
        lr_scale: f64,
    ) -> ParamId {
        let id = ParamId(self.params.len() as u32);
        self.params.push(Parameter { id, name: name.to_string(), value, trainable, lr_scale });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0 as usize]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0 as usize].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let p = &mut self.params[id.0 as usize];
        if !p.value.same_shape(&value) {
            return Err(Error::shape(format!(
                "parameter {} is {}x{}, assignment is {}x{}",
                p.name,
                p.value.rows(),
                p.value.cols(),
                value.rows(),
                value.cols()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Ascending-id iteration; the only sanctioned way to walk parameters.
    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.params.iter().filter(|p| p.trainable).map(|p| p.id).collect()
    }

    /// Total scalar count across trainable parameters.
    pub fn trainable_len(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }
}
