//! Adaptive moment estimation over the named parameter tensors.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParamTensor;
use crate::pipeline::MatcherParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators and the shared step counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, ParamTensor>,
    pub second: BTreeMap<String, ParamTensor>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One update over every parameter, in sorted name order. Gradients missing
/// from the map are treated as zero.
pub fn adam_step(
    params: &mut MatcherParams,
    grads: &BTreeMap<String, Array2<f64>>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - ADAM_BETA1.powf(t);
    let bias2 = 1.0 - ADAM_BETA2.powf(t);
    let names = params.names();
    for name in names {
        let mut value = params.get(&name)?;
        let shape = value.dim();
        let grad = match grads.get(&name) {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        };
        let mut m = state
            .first
            .get(&name)
            .map(|t| t.to_array())
            .transpose()?
            .unwrap_or_else(|| Array2::zeros(shape));
        let mut v = state
            .second
            .get(&name)
            .map(|t| t.to_array())
            .transpose()?
            .unwrap_or_else(|| Array2::zeros(shape));
        m = &m * ADAM_BETA1 + &grad * (1.0 - ADAM_BETA1);
        v = &v * ADAM_BETA2 + &grad.mapv(|g| g * g) * (1.0 - ADAM_BETA2);
        let m_hat = &m / bias1;
        let v_hat = &v / bias2;
        let update = m_hat / (v_hat.mapv(f64::sqrt) + ADAM_EPS);
        value = value - update * lr;
        params.set(&name, &value)?;
        state.first.insert(name.clone(), ParamTensor::from_array(&m));
        state.second.insert(name.clone(), ParamTensor::from_array(&v));
    }
    Ok(())
}
