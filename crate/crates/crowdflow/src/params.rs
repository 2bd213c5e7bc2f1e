//! Named parameter tensors with deterministic ordering.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered map from parameter name to tensor. Iteration order is the
/// lexicographic name order, which fixes the optimizer update order, the
/// checkpoint layout, and the gradient-check sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: BTreeMap<String, ParamTensor>,
}

/// Flat storage plus shape, the checkpoint wire format for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn from_array(a: &Array2<f64>) -> Self {
        ParamTensor {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().cloned().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Data(format!("parameter shape mismatch: {e}")))
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.tensors
            .insert(name.to_string(), ParamTensor::from_array(&value));
    }

    pub fn get(&self, name: &str) -> Result<Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))?
            .to_array()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// In-place update of one tensor.
    pub fn set(&mut self, name: &str, value: &Array2<f64>) -> Result<()> {
        let t = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))?;
        if (t.rows, t.cols) != value.dim() {
            return Err(Error::Data(format!(
                "parameter '{name}' shape {:?} cannot be set from {:?}",
                (t.rows, t.cols),
                value.dim()
            )));
        }
        t.data.clear();
        t.data.extend(value.iter().cloned());
        Ok(())
    }

    /// Mutable access to the raw storage of one tensor.
    pub fn data_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        Ok(&mut self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))?
            .data)
    }

    pub fn tensor(&self, name: &str) -> Result<&ParamTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))
    }
}
