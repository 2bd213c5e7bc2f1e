//! Training: label extension, the matching loss, reverse-mode
//! differentiation through the full pipeline including the unrolled
//! transport solver, the optimizer, and finite-difference verification.

pub mod labels;
pub mod optim;
pub mod tape;

use std::collections::BTreeMap;

use ndarray::Array2;

pub use labels::{extend_labels, MatchLabels};
pub use optim::{adam_step, OptimizerState};
pub use tape::{Gradients, Tape, TensorId};

use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::matching::MatchMatrix;
use crate::pipeline::{
    build_cost, build_descriptors, build_dustbin_score, build_matching_loss,
    build_unrolled_sinkhorn, BoundParams, MatchConfig, MatcherParams,
};

/// Negative log-likelihood of the labeled plan entries: matched pairs read
/// `P[i][j]`, departing descriptors the dustbin column, arriving ones the
/// dustbin row. Returned un-normalized; training divides by the label count
/// before averaging over the batch.
pub fn matching_loss(plan: &MatchMatrix, labels: &MatchLabels) -> Result<f64> {
    let (n, m) = plan.inner_dim();
    let mut total = 0.0;
    let mut take = |i: usize, j: usize| -> Result<()> {
        let p = plan.plan[[i, j]];
        if p <= 0.0 {
            return Err(Error::Degenerate(format!(
                "plan entry ({i}, {j}) = {p} is not positive"
            )));
        }
        total -= p.ln();
        Ok(())
    };
    for &(i, j) in &labels.matched {
        take(i, j)?;
    }
    for &i in &labels.unmatched_a {
        take(i, m)?;
    }
    for &j in &labels.unmatched_b {
        take(n, j)?;
    }
    Ok(total)
}

/// One training example: a frame pair's descriptor sets plus labels.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub set_a: DescriptorSet,
    pub set_b: DescriptorSet,
    pub labels: MatchLabels,
}

/// A completed forward pass, ready for backward or inspection.
pub struct PairForward {
    pub tape: Tape,
    pub bound: BoundParams,
    pub loss_raw: TensorId,
    pub loss_norm: TensorId,
    pub plan: TensorId,
    pub dustbin: TensorId,
}

/// Record the full pipeline for one pair on a fresh tape.
pub fn pair_forward(
    params: &MatcherParams,
    pair: &TrainPair,
    cfg: &MatchConfig,
) -> Result<PairForward> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params)?;
    let (d_a, d_b) = build_descriptors(
        &mut tape,
        &bound,
        &pair.set_a,
        &pair.set_b,
        params.agnn.dim,
        params.agnn.layers,
    )?;
    let s = build_dustbin_score(
        &mut tape,
        &bound,
        d_a,
        d_b,
        params.dustbin.dim,
        params.dustbin.layers,
        cfg.adaptive_dustbin,
    )?;
    let cost = build_cost(&mut tape, d_a, d_b, s);
    let (log_p, plan) = build_unrolled_sinkhorn(&mut tape, cost, cfg.lambda, cfg.sinkhorn_iters)?;
    let (raw, norm) =
        build_matching_loss(&mut tape, log_p, &pair.labels, pair.set_a.len(), pair.set_b.len())?;
    Ok(PairForward {
        tape,
        bound,
        loss_raw: raw,
        loss_norm: norm,
        plan,
        dustbin: s,
    })
}

/// Scalars reported for one optimizer step.
#[derive(Debug, Clone)]
pub struct StepStats {
    /// Mean normalized loss over the batch, before the update.
    pub loss: f64,
    /// Mean un-normalized loss over the batch.
    pub loss_raw: f64,
    pub grad_norm: f64,
    /// Dustbin score per batch item.
    pub dustbin_scores: Vec<f64>,
}

/// Forward/backward over the batch, then one optimizer update. Returns the
/// pre-update statistics.
pub fn train_step(
    batch: &[TrainPair],
    params: &mut MatcherParams,
    opt: &mut OptimizerState,
    cfg: &MatchConfig,
    lr: f64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Invalid("training batch is empty".into()));
    }
    let mut grad_acc: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut loss_sum = 0.0;
    let mut raw_sum = 0.0;
    let mut dustbin_scores = Vec::with_capacity(batch.len());
    for (k, pair) in batch.iter().enumerate() {
        let fwd = pair_forward(params, pair, cfg)?;
        let loss = fwd.tape.scalar(fwd.loss_norm);
        if !loss.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite loss {loss} on batch item {k} (n={}, m={}, labels={})",
                pair.set_a.len(),
                pair.set_b.len(),
                pair.labels.len()
            )));
        }
        loss_sum += loss;
        raw_sum += fwd.tape.scalar(fwd.loss_raw);
        dustbin_scores.push(fwd.tape.scalar(fwd.dustbin));
        let grads = fwd.tape.backward(fwd.loss_norm)?;
        for (name, g) in fwd.bound.gradients(&grads) {
            grad_acc
                .entry(name)
                .and_modify(|acc| *acc += &g)
                .or_insert(g);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad_norm_sq = 0.0;
    for g in grad_acc.values_mut() {
        *g *= scale;
        grad_norm_sq += g.iter().map(|v| v * v).sum::<f64>();
    }
    adam_step(params, &grad_acc, opt, lr)?;
    Ok(StepStats {
        loss: loss_sum * scale,
        loss_raw: raw_sum * scale,
        grad_norm: grad_norm_sq.sqrt(),
        dustbin_scores,
    })
}

/// Analytic gradients of the normalized pair loss for every parameter.
pub fn analytic_gradients(
    params: &MatcherParams,
    pair: &TrainPair,
    cfg: &MatchConfig,
) -> Result<BTreeMap<String, Array2<f64>>> {
    let fwd = pair_forward(params, pair, cfg)?;
    let grads = fwd.tape.backward(fwd.loss_norm)?;
    Ok(fwd.bound.gradients(&grads))
}

/// Central finite differences over every scalar parameter.
pub fn numeric_gradients(
    params: &MatcherParams,
    pair: &TrainPair,
    cfg: &MatchConfig,
    eps: f64,
) -> Result<BTreeMap<String, Array2<f64>>> {
    let eval = |p: &MatcherParams| -> Result<f64> {
        let fwd = pair_forward(p, pair, cfg)?;
        Ok(fwd.tape.scalar(fwd.loss_norm))
    };
    let mut out = BTreeMap::new();
    for name in params.names() {
        let base = params.get(&name)?;
        let mut grad = Array2::zeros(base.dim());
        for i in 0..base.nrows() {
            for j in 0..base.ncols() {
                let mut probe = params.clone();
                let mut t = base.clone();
                t[[i, j]] += eps;
                probe.set(&name, &t)?;
                let up = eval(&probe)?;
                t[[i, j]] = base[[i, j]] - eps;
                probe.set(&name, &t)?;
                let down = eval(&probe)?;
                grad[[i, j]] = (up - down) / (2.0 * eps);
            }
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Worst relative deviation between two gradient maps. The denominator is
/// floored at 1e-3 so that finite-difference noise on near-zero entries
/// does not register as disagreement.
pub fn max_relative_deviation(
    a: &BTreeMap<String, Array2<f64>>,
    b: &BTreeMap<String, Array2<f64>>,
) -> f64 {
    let mut worst = 0.0f64;
    for (name, ga) in a {
        let gb = &b[name];
        for (x, y) in ga.iter().zip(gb.iter()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-3);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Compare reverse-mode gradients against central finite differences over
/// every scalar parameter; returns the worst relative error.
pub fn grad_check(
    params: &MatcherParams,
    pair: &TrainPair,
    cfg: &MatchConfig,
    eps: f64,
) -> Result<f64> {
    let analytic = analytic_gradients(params, pair, cfg)?;
    let numeric = numeric_gradients(params, pair, cfg, eps)?;
    Ok(max_relative_deviation(&analytic, &numeric))
}
