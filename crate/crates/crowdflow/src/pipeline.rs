//! The matcher forward path, built once on the differentiation tape and
//! shared by inference and training. Inference detaches at the cost matrix
//! and hands off to the fast scaling solver; training continues through the
//! unrolled solver to the loss.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{AgnnParams, DescriptorSet};
use crate::error::{Error, Result};
use crate::matching::{
    assemble_cost, augmented_marginals, reverse_topk_match, sinkhorn, CostMatrix,
    DustbinPredictorParams, MatchMatrix, ScoreMatrix, SinkhornDiag,
};
use crate::train::labels::MatchLabels;
use crate::train::tape::{Tape, TensorId};

/// Full matcher parameter bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherParams {
    pub agnn: AgnnParams,
    pub dustbin: DustbinPredictorParams,
}

impl MatcherParams {
    pub fn init(dim: usize, agnn_layers: usize, encoder_layers: usize, rng: &mut impl Rng) -> Self {
        MatcherParams {
            agnn: AgnnParams::init(dim, agnn_layers, rng),
            dustbin: DustbinPredictorParams::init(dim, encoder_layers, rng),
        }
    }

    pub fn zeros(dim: usize, agnn_layers: usize, encoder_layers: usize) -> Self {
        MatcherParams {
            agnn: AgnnParams::zeros(dim, agnn_layers),
            dustbin: DustbinPredictorParams::zeros(dim, encoder_layers),
        }
    }

    /// All named tensors, AGNN first, in each set's sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &crate::params::ParamTensor)> {
        self.agnn.set.iter().chain(self.dustbin.set.iter())
    }

    pub fn get(&self, name: &str) -> Result<Array2<f64>> {
        if name.starts_with("dustbin.") {
            self.dustbin.set.get(name)
        } else {
            self.agnn.set.get(name)
        }
    }

    pub fn set(&mut self, name: &str, value: &Array2<f64>) -> Result<()> {
        if name.starts_with("dustbin.") {
            self.dustbin.set.set(name, value)
        } else {
            self.agnn.set.set(name, value)
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.iter().map(|(n, _)| n.to_string()).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.agnn.set.scalar_count() + self.dustbin.set.scalar_count()
    }
}

/// Solver and match-extraction settings for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub lambda: f64,
    pub sinkhorn_iters: usize,
    /// Early-stop residual for the standalone solver; 0 runs all iterations.
    pub sinkhorn_tol: f64,
    pub topk: usize,
    pub theta: f64,
    /// Predict the dustbin score per pair; false freezes it to the single
    /// learnable scalar.
    pub adaptive_dustbin: bool,
}

/// Parameters recorded on a tape, addressable by name for gradient lookup.
pub struct BoundParams {
    ids: BTreeMap<String, (TensorId, (usize, usize))>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &MatcherParams) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (name, tensor) in params.iter() {
            let arr = tensor.to_array()?;
            let shape = arr.dim();
            let id = tape.leaf(arr);
            ids.insert(name.to_string(), (id, shape));
        }
        Ok(BoundParams { ids })
    }

    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .map(|(id, _)| *id)
            .ok_or_else(|| Error::Data(format!("parameter '{name}' not bound")))
    }

    /// Collect per-parameter gradients after a backward sweep; parameters
    /// the loss does not touch get exact zeros.
    pub fn gradients(
        &self,
        grads: &crate::train::tape::Gradients,
    ) -> BTreeMap<String, Array2<f64>> {
        self.ids
            .iter()
            .map(|(name, (id, shape))| (name.clone(), grads.get_or_zeros(*id, *shape)))
            .collect()
    }
}

fn mlp2(
    tape: &mut Tape,
    x: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
) -> TensorId {
    let h = tape.matmul(x, w1);
    let h = tape.add_row_vec(h, b1);
    let h = tape.tanh(h);
    let o = tape.matmul(h, w2);
    tape.add_row_vec(o, b2)
}

fn attention_block(
    tape: &mut Tape,
    x_query: TensorId,
    x_source: TensorId,
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    dim: usize,
) -> TensorId {
    let q = tape.matmul(x_query, wq);
    let k = tape.matmul(x_source, wk);
    let v = tape.matmul(x_source, wv);
    let kt = tape.transpose(k);
    let logits = tape.matmul(q, kt);
    let scaled = tape.scale(logits, 1.0 / (dim as f64).sqrt());
    let w = tape.row_softmax(scaled);
    tape.matmul(w, v)
}

/// Position-enhance both sets and run the alternating attention stack plus
/// the final projection. Returns the association descriptor tensors.
pub fn build_descriptors(
    tape: &mut Tape,
    bound: &BoundParams,
    set_a: &DescriptorSet,
    set_b: &DescriptorSet,
    dim: usize,
    layers: usize,
) -> Result<(TensorId, TensorId)> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::Invalid(
            "descriptor matching needs non-empty sets on both frames".into(),
        ));
    }
    let f_a = tape.leaf(set_a.feature_matrix());
    let f_b = tape.leaf(set_b.feature_matrix());
    let c_a = tape.leaf(set_a.normalized_coords());
    let c_b = tape.leaf(set_b.normalized_coords());

    let (pw1, pb1, pw2, pb2) = (
        bound.id("pos.w1")?,
        bound.id("pos.b1")?,
        bound.id("pos.w2")?,
        bound.id("pos.b2")?,
    );
    let p_a = mlp2(tape, c_a, pw1, pb1, pw2, pb2);
    let p_b = mlp2(tape, c_b, pw1, pb1, pw2, pb2);
    let mut x_a = tape.add(f_a, p_a);
    let mut x_b = tape.add(f_b, p_b);

    for l in 0..layers {
        let wq = bound.id(&format!("agnn.l{l}.wq"))?;
        let wk = bound.id(&format!("agnn.l{l}.wk"))?;
        let wv = bound.id(&format!("agnn.l{l}.wv"))?;
        let mw1 = bound.id(&format!("agnn.l{l}.msg.w1"))?;
        let mb1 = bound.id(&format!("agnn.l{l}.msg.b1"))?;
        let mw2 = bound.id(&format!("agnn.l{l}.msg.w2"))?;
        let mb2 = bound.id(&format!("agnn.l{l}.msg.b2"))?;
        // Even layers attend within the frame, odd layers across; both
        // frames advance simultaneously from the layer-l state.
        let (src_a, src_b) = if l % 2 == 0 { (x_a, x_b) } else { (x_b, x_a) };
        let m_a = attention_block(tape, x_a, src_a, wq, wk, wv, dim);
        let m_b = attention_block(tape, x_b, src_b, wq, wk, wv, dim);
        let cat_a = tape.concat_cols(x_a, m_a);
        let cat_b = tape.concat_cols(x_b, m_b);
        let u_a = mlp2(tape, cat_a, mw1, mb1, mw2, mb2);
        let u_b = mlp2(tape, cat_b, mw1, mb1, mw2, mb2);
        x_a = tape.add(x_a, u_a);
        x_b = tape.add(x_b, u_b);
    }

    let (prw, prb) = (bound.id("proj.w")?, bound.id("proj.b")?);
    let d_a = tape.matmul(x_a, prw);
    let d_a = tape.add_row_vec(d_a, prb);
    let d_b = tape.matmul(x_b, prw);
    let d_b = tape.add_row_vec(d_b, prb);
    Ok((d_a, d_b))
}

/// Dustbin score from the token sequence `[q, dA.., q, dB..]` through the
/// residual encoder stack; the outputs at the two query slots (rows 0 and
/// n+1) feed the output MLP.
pub fn build_dustbin_score(
    tape: &mut Tape,
    bound: &BoundParams,
    d_a: TensorId,
    d_b: TensorId,
    dim: usize,
    encoder_layers: usize,
    adaptive: bool,
) -> Result<TensorId> {
    if !adaptive {
        return bound.id("dustbin.scalar");
    }
    let n = tape.value(d_a).nrows();
    let q = bound.id("dustbin.query")?;
    let left = tape.concat_rows(q, d_a);
    let right = tape.concat_rows(q, d_b);
    let mut x = tape.concat_rows(left, right);
    for l in 0..encoder_layers {
        let wq = bound.id(&format!("dustbin.l{l}.wq"))?;
        let wk = bound.id(&format!("dustbin.l{l}.wk"))?;
        let wv = bound.id(&format!("dustbin.l{l}.wv"))?;
        let fw1 = bound.id(&format!("dustbin.l{l}.ff.w1"))?;
        let fb1 = bound.id(&format!("dustbin.l{l}.ff.b1"))?;
        let fw2 = bound.id(&format!("dustbin.l{l}.ff.w2"))?;
        let fb2 = bound.id(&format!("dustbin.l{l}.ff.b2"))?;
        let attn = attention_block(tape, x, x, wq, wk, wv, dim);
        x = tape.add(x, attn);
        let ff = mlp2(tape, x, fw1, fb1, fw2, fb2);
        x = tape.add(x, ff);
    }
    let s1 = tape.rows(x, 0, 1);
    let s2 = tape.rows(x, n + 1, n + 2);
    let cat = tape.concat_cols(s1, s2);
    let ow1 = bound.id("dustbin.out.w1")?;
    let ob1 = bound.id("dustbin.out.b1")?;
    let ow2 = bound.id("dustbin.out.w2")?;
    let ob2 = bound.id("dustbin.out.b2")?;
    Ok(mlp2(tape, cat, ow1, ob1, ow2, ob2))
}

/// Similarity block and augmented cost on the tape.
pub fn build_cost(
    tape: &mut Tape,
    d_a: TensorId,
    d_b: TensorId,
    dustbin: TensorId,
) -> TensorId {
    let d_b_t = tape.transpose(d_b);
    let scores = tape.matmul(d_a, d_b_t);
    tape.augment_dustbin(scores, dustbin)
}

/// Unrolled log-domain scaling updates with fixed iteration count; returns
/// the log-plan and the plan. Differentiation replays exactly these
/// iterations, so gradients match the forward computation.
pub fn build_unrolled_sinkhorn(
    tape: &mut Tape,
    cost: TensorId,
    lambda: f64,
    iters: usize,
) -> Result<(TensorId, TensorId)> {
    if iters == 0 {
        return Err(Error::Invalid("iters must be >= 1".into()));
    }
    let (n1, m1) = tape.value(cost).dim();
    let (a, b) = augmented_marginals(n1 - 1, m1 - 1);
    let log_a = tape.leaf(
        Array2::from_shape_vec((n1, 1), a.mapv(f64::ln).to_vec()).expect("column"),
    );
    let log_b = tape.leaf(
        Array2::from_shape_vec((1, m1), b.mapv(f64::ln).to_vec()).expect("row"),
    );
    let kernel = tape.scale(cost, lambda);
    if tape.value(kernel).iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "lambda * cost overflows double precision".into(),
        ));
    }
    let mut v = tape.leaf(Array2::zeros((1, m1)));
    let mut u = tape.leaf(Array2::zeros((n1, 1)));
    for _ in 0..iters {
        let kv = tape.sub_row_vec(kernel, v);
        let lse_r = tape.logsumexp_rows(kv);
        u = tape.sub(lse_r, log_a);
        let ku = tape.sub_col_vec(kernel, u);
        let lse_c = tape.logsumexp_cols(ku);
        v = tape.sub(lse_c, log_b);
    }
    let centered = tape.sub_col_vec(kernel, u);
    let log_p = tape.sub_row_vec(centered, v);
    let p = tape.exp(log_p);
    Ok((log_p, p))
}

/// Negative log-likelihood of the labeled entries, read from the log-plan.
/// Returns `(raw, normalized)`: the plain sum and the same value divided by
/// the label count so the scale is invariant to crowd size.
pub fn build_matching_loss(
    tape: &mut Tape,
    log_p: TensorId,
    labels: &MatchLabels,
    n: usize,
    m: usize,
) -> Result<(TensorId, TensorId)> {
    let count = labels.len();
    if count == 0 {
        return Err(Error::Invalid("no labeled entries to score".into()));
    }
    let mut indices = Vec::with_capacity(count);
    for &(i, j) in &labels.matched {
        indices.push((i, j));
    }
    for &i in &labels.unmatched_a {
        indices.push((i, m));
    }
    for &j in &labels.unmatched_b {
        indices.push((n, j));
    }
    let picked = tape.gather(log_p, indices);
    let total = tape.sum(picked);
    let raw = tape.scale(total, -1.0);
    let normalized = tape.scale(raw, 1.0 / count as f64);
    Ok((raw, normalized))
}

/// Correspondences and diagnostics for one frame pair.
#[derive(Debug, Clone)]
pub struct PairMatchOutcome {
    /// Per frame-t descriptor: matched frame-(t+delta) descriptor index.
    pub match_a: Vec<Option<usize>>,
    /// Per frame-(t+delta) descriptor: matched frame-t descriptor index.
    pub match_b: Vec<Option<usize>>,
    pub plan: MatchMatrix,
    pub diag: SinkhornDiag,
}

/// Inference for one pair: forward to the cost matrix on a tape, then the
/// fast solver and reverse top-K in both directions.
pub fn match_pair(
    set_a: &DescriptorSet,
    set_b: &DescriptorSet,
    params: &MatcherParams,
    cfg: &MatchConfig,
) -> Result<PairMatchOutcome> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params)?;
    let (d_a, d_b) =
        build_descriptors(&mut tape, &bound, set_a, set_b, params.agnn.dim, params.agnn.layers)?;
    let s = build_dustbin_score(
        &mut tape,
        &bound,
        d_a,
        d_b,
        params.dustbin.dim,
        params.dustbin.layers,
        cfg.adaptive_dustbin,
    )?;
    let cost = CostMatrix {
        matrix: {
            let mut tape_cost = tape.value(d_a).dot(&tape.value(d_b).t());
            let score = ScoreMatrix {
                values: std::mem::take(&mut tape_cost),
            };
            assemble_cost(&score, tape.scalar(s)).matrix
        },
        dustbin_score: tape.scalar(s),
    };
    let solved = sinkhorn(&cost, cfg.lambda, cfg.sinkhorn_iters, cfg.sinkhorn_tol)?;
    let match_a = reverse_topk_match(&solved.plan, cfg.topk, cfg.theta)?;
    let match_b = reverse_topk_match(&solved.plan.transposed(), cfg.topk, cfg.theta)?;
    Ok(PairMatchOutcome {
        match_a,
        match_b,
        plan: solved.plan,
        diag: solved.diag,
    })
}

/// Ground-truth correspondences by identity ownership, for the oracle mode.
/// A descriptor owned by an identity visible in both frames is matched to
/// the same-offset cell when retained, otherwise to the nearest retained
/// cell of the same identity; descriptors of identities visible in one
/// frame only, and owner-less cells, stay unmatched.
pub fn oracle_matches(
    points_a: &[crate::grid::PointAnnotation],
    points_b: &[crate::grid::PointAnnotation],
    set_a: &DescriptorSet,
    set_b: &DescriptorSet,
    r_lab: usize,
    downsample: u32,
) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    use crate::train::labels::cell_owner;
    let ids_a: std::collections::HashSet<u64> = points_a.iter().map(|p| p.id).collect();
    let ids_b: std::collections::HashSet<u64> = points_b.iter().map(|p| p.id).collect();

    let owners = |set: &DescriptorSet, points: &[crate::grid::PointAnnotation]| -> Vec<Option<u64>> {
        set.items
            .iter()
            .map(|d| cell_owner(d.coord, points, r_lab, downsample).map(|k| points[k].id))
            .collect()
    };
    let owner_a = owners(set_a, points_a);
    let owner_b = owners(set_b, points_b);

    let link = |owner_from: &[Option<u64>],
                ids_other: &std::collections::HashSet<u64>,
                set_from: &DescriptorSet,
                set_to: &DescriptorSet,
                owner_to: &[Option<u64>]| {
        owner_from
            .iter()
            .enumerate()
            .map(|(i, o)| match o {
                Some(id) if ids_other.contains(id) => {
                    let from = set_from.items[i].coord;
                    let mut best: Option<(f64, usize)> = None;
                    for (j, oj) in owner_to.iter().enumerate() {
                        if *oj != Some(*id) {
                            continue;
                        }
                        let to = set_to.items[j].coord;
                        let dx = from.x as f64 - to.x as f64;
                        let dy = from.y as f64 - to.y as f64;
                        let d2 = dx * dx + dy * dy;
                        if best.map_or(true, |(bd, _)| d2 < bd) {
                            best = Some((d2, j));
                        }
                    }
                    best.map(|(_, j)| j)
                }
                _ => None,
            })
            .collect::<Vec<Option<usize>>>()
    };
    // Same-offset cells are the nearest same-identity cells by construction,
    // so the nearest-cell rule reproduces the offset pairing when available.
    let match_a = link(&owner_a, &ids_b, set_a, set_b, &owner_b);
    let match_b = link(&owner_b, &ids_a, set_b, set_a, &owner_a);
    (match_a, match_b)
}

/// Evaluate only the position encoder for a batch of normalized coordinates.
pub fn encode_positions_matrix(coords: &Array2<f64>, params: &AgnnParams) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let c = tape.leaf(coords.clone());
    let w1 = tape.leaf(params.set.get("pos.w1")?);
    let b1 = tape.leaf(params.set.get("pos.b1")?);
    let w2 = tape.leaf(params.set.get("pos.w2")?);
    let b2 = tape.leaf(params.set.get("pos.b2")?);
    let out = mlp2(&mut tape, c, w1, b1, w2, b2);
    Ok(tape.value(out).clone())
}

/// Association descriptors for both sets (the non-tape-facing surface).
pub fn agnn_descriptors(
    set_a: &DescriptorSet,
    set_b: &DescriptorSet,
    params: &AgnnParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let mut ids = BTreeMap::new();
    for (name, tensor) in params.set.iter() {
        let arr = tensor.to_array()?;
        let shape = arr.dim();
        ids.insert(name.to_string(), (tape.leaf(arr), shape));
    }
    let bound = BoundParams { ids };
    let (d_a, d_b) = build_descriptors(&mut tape, &bound, set_a, set_b, params.dim, params.layers)?;
    Ok((tape.value(d_a).clone(), tape.value(d_b).clone()))
}

/// Dustbin score for prepared descriptor matrices.
pub fn dustbin_score_value(
    d_a: &Array2<f64>,
    d_b: &Array2<f64>,
    params: &DustbinPredictorParams,
) -> Result<f64> {
    if d_a.nrows() == 0 || d_b.nrows() == 0 {
        return Err(Error::Invalid("dustbin score needs non-empty sets".into()));
    }
    let mut tape = Tape::new();
    let mut ids = BTreeMap::new();
    for (name, tensor) in params.set.iter() {
        let arr = tensor.to_array()?;
        let shape = arr.dim();
        ids.insert(name.to_string(), (tape.leaf(arr), shape));
    }
    let bound = BoundParams { ids };
    let ia = tape.leaf(d_a.clone());
    let ib = tape.leaf(d_b.clone());
    let s = build_dustbin_score(&mut tape, &bound, ia, ib, params.dim, params.layers, true)?;
    Ok(tape.scalar(s))
}

/// Marginal vectors as tape-ready column/row shapes.
pub fn marginals_for(n: usize, m: usize) -> (Array1<f64>, Array1<f64>) {
    augmented_marginals(n, m)
}
