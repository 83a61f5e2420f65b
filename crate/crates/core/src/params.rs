//! Named, ordered parameter tensors.

use ncl_autograd::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameters in a fixed order. Models address them by position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    entries: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.entries.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.tensor.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    /// Replaces every tensor, keeping names. Shapes must match.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.len() {
            return Err(data_err("parameter count mismatch"));
        }
        for (e, t) in self.entries.iter().zip(&tensors) {
            if e.tensor.shape() != t.shape() {
                return Err(data_err(format!("shape mismatch for parameter {}", e.name)));
            }
        }
        for (e, t) in self.entries.iter_mut().zip(tensors) {
            e.tensor = t;
        }
        Ok(())
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Adds every tensor to `g`, as parameters when `trainable`, else as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|e| {
                if trainable {
                    g.param(e.tensor.clone())
                } else {
                    g.constant(e.tensor.clone())
                }
            })
            .collect()
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(data_err(format!(
                "parameter sets differ in length: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(data_err(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Largest elementwise difference, or `None` when incompatible.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Option<f64> {
        self.check_compatible(other).ok()?;
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| a.max_abs_diff(b))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
    }
}
