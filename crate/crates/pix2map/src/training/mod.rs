//! The contrastive training objective and the Adam optimization loop.
//!
//! The loss couples three terms: a symmetric InfoNCE over the cosine
//! similarity matrix, a soft-assignment Chamfer term that credits
//! retrieval weight placed on geometrically similar graphs, and a BCE
//! edge term that does the same for connectivity. The graph-similarity
//! terms differentiate through the softmax retrieval weights only;
//! vertex correspondences and distances are recomputed every step but
//! treated as constants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, VarId};
use crate::encoders::{
    build_attention_mask, feature_encode_batch, feature_encode_tape, graph_encode_batch,
    graph_encode_tape, node_input_features, EncoderError, FeatureEncoderConfig,
    GraphEncoderConfig, ModelParams, TapeParams,
};
use crate::lanegraph::{dist, NodeGraph};
use crate::metrics::{vertex_correspondence, MetricError, VertexCorrespondence};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("batch must be non-empty")]
    EmptyBatch,
    #[error("dataset must be non-empty")]
    EmptyDataset,
    #[error("batch size {batch_size} exceeds dataset size {dataset}")]
    BatchTooLarge { batch_size: usize, dataset: usize },
    #[error("zero-norm {side} embedding at row {row}")]
    ZeroNorm { side: &'static str, row: usize },
    #[error("sample {index}: {message}")]
    BadSample { index: usize, message: String },
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged { epoch: usize, batch: usize, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type TrainResult<T> = Result<T, TrainError>;

/// Optimization hyperparameters and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of the contrastive term.
    pub omega1: f64,
    /// Weight of the Chamfer credit term.
    pub omega2: f64,
    /// Weight of the edge BCE term.
    pub omega3: f64,
    /// Floor added to predicted edge probabilities before the BCE.
    pub bce_epsilon: f64,
    /// Fixed multiplier applied to the similarity matrix before all
    /// softmaxes (an inverse temperature; 1 = raw cosine).
    pub scale: f64,
    /// Seeds parameter init and the epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 200,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            omega1: 1.0,
            omega2: 1.0,
            omega3: 0.1,
            bce_epsilon: 1e-6,
            scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> TrainResult<()> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        // learning_rate 0 is allowed: it freezes the parameters, which
        // the no-op contract of the training loop relies on.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return bad(format!("{name} must be in [0, 1), got {beta}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        for (name, omega) in
            [("omega1", self.omega1), ("omega2", self.omega2), ("omega3", self.omega3)]
        {
            if !(omega >= 0.0) || !omega.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {omega}"));
            }
        }
        if !(self.bce_epsilon > 0.0 && self.bce_epsilon < 0.5) {
            return bad(format!("bce_epsilon must lie in (0, 0.5), got {}", self.bce_epsilon));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return bad(format!("scale must be finite and positive, got {}", self.scale));
        }
        Ok(())
    }
}

/// One (feature vector, lane graph) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub features: Vec<f64>,
    pub graph: NodeGraph,
}

/// Per-term loss values; `total` is the omega-weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub chamfer: f64,
    pub edge: f64,
    pub total: f64,
}

/// Tape handles of the loss terms; backward runs on `total`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub contrastive: VarId,
    pub chamfer: VarId,
    pub edge: VarId,
    pub total: VarId,
}

// ── value-level loss functions ──────────────────────────────────────────
//
// Straight-loop implementations, independent of the tape builders below;
// the test suite pins both against each other and against hand-worked
// examples.

/// Pairwise cosine similarities between the rows of two embedding
/// matrices: `alpha[i][j] = cos(img[i], graph[j])`.
pub fn similarity_matrix<S: Scalar>(
    img: &Tensor<S>,
    graph: &Tensor<S>,
) -> TrainResult<Tensor<S>> {
    assert_eq!(img.rows(), graph.rows(), "similarity_matrix needs equal row counts");
    assert_eq!(img.cols(), graph.cols(), "similarity_matrix needs equal widths");
    let norms = |t: &Tensor<S>, side: &'static str| -> TrainResult<Vec<S>> {
        (0..t.rows())
            .map(|row| {
                let n = t.row(row).iter().map(|&x| x * x).sum::<S>().sqrt();
                if n > S::zero() {
                    Ok(n)
                } else {
                    Err(TrainError::ZeroNorm { side, row })
                }
            })
            .collect()
    };
    let ni = norms(img, "image")?;
    let ng = norms(graph, "graph")?;
    let n = img.rows();
    let mut alpha = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dot = img.row(i).iter().zip(graph.row(j)).map(|(&a, &b)| a * b).sum::<S>();
            alpha.set(i, j, dot / (ni[i] * ng[j]));
        }
    }
    Ok(alpha)
}

/// Sum over rows of the negative log-softmax at the diagonal entry.
fn row_nll<S: Scalar>(alpha: &Tensor<S>) -> f64 {
    let n = alpha.rows();
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = alpha.row(i).iter().map(|&x| x.to_f64()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[i];
    }
    total
}

/// Symmetric InfoNCE over a square similarity matrix: the mean of the
/// row-wise and column-wise cross-entropies against the diagonal.
pub fn contrastive_loss<S: Scalar>(alpha: &Tensor<S>) -> f64 {
    assert_eq!(alpha.rows(), alpha.cols(), "contrastive_loss needs a square matrix");
    let n = alpha.rows();
    (row_nll(alpha) + row_nll(&alpha.transpose())) / (2.0 * n as f64)
}

fn softmax_column<S: Scalar>(alpha: &Tensor<S>, col: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..alpha.rows()).map(|i| alpha.get(i, col).to_f64()).collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// All correspondences out of graph `b` plus each one's mean vertex
/// displacement, shared by the two graph-similarity losses.
fn correspondences_from(
    graphs: &[&NodeGraph],
    b: usize,
) -> TrainResult<(Vec<VertexCorrespondence>, Vec<f64>)> {
    let gb = graphs[b];
    let mut pis = Vec::with_capacity(graphs.len());
    let mut mean_dists = Vec::with_capacity(graphs.len());
    for gi in graphs {
        let pi = vertex_correspondence(gb, gi)?;
        let total: f64 = gb
            .positions
            .iter()
            .enumerate()
            .map(|(v, &p)| dist(p, gi.positions[pi.mapping[v]]))
            .sum();
        mean_dists.push(total / gb.node_count() as f64);
        pis.push(pi);
    }
    Ok((pis, mean_dists))
}

/// Soft-assignment Chamfer loss: each batch element in turn plays the
/// ground truth, retrieval weights are the softmax over its similarity
/// column, and every candidate graph is charged its weighted mean
/// vertex displacement under nearest-neighbor correspondence.
pub fn chamfer_credit_loss<S: Scalar>(
    graphs: &[&NodeGraph],
    alpha: &Tensor<S>,
) -> TrainResult<f64> {
    let n = graphs.len();
    assert_eq!(alpha.rows(), n, "alpha must be batch-sized");
    assert_eq!(alpha.cols(), n, "alpha must be square");
    let mut total = 0.0;
    for b in 0..n {
        let weights = softmax_column(alpha, b);
        let (_, mean_dists) = correspondences_from(graphs, b)?;
        total += weights.iter().zip(&mean_dists).map(|(w, d)| w * d).sum::<f64>();
    }
    Ok(total / n as f64)
}

/// BCE between soft-predicted and ground-truth connectivity. For each
/// ordered vertex pair of the ground-truth graph, the predicted edge
/// probability is the retrieval-weighted vote of the candidates' edges
/// under correspondence, floored and ceiled by `epsilon`; pairs that no
/// candidate predicts and the truth lacks are skipped.
pub fn edge_loss<S: Scalar>(
    graphs: &[&NodeGraph],
    alpha: &Tensor<S>,
    epsilon: f64,
) -> TrainResult<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(TrainError::BadConfig(format!(
            "bce_epsilon must lie in (0, 0.5), got {epsilon}"
        )));
    }
    let n = graphs.len();
    assert_eq!(alpha.rows(), n, "alpha must be batch-sized");
    assert_eq!(alpha.cols(), n, "alpha must be square");
    let mut total = 0.0;
    for b in 0..n {
        let gb = graphs[b];
        let vb = gb.node_count();
        if vb < 2 {
            continue;
        }
        let weights = softmax_column(alpha, b);
        let (pis, _) = correspondences_from(graphs, b)?;
        let mut sum_b = 0.0;
        for v in 0..vb {
            for w in 0..vb {
                if v == w {
                    continue;
                }
                let truth = gb.adjacency.get(v, w) != 0;
                let mut p_raw = 0.0;
                let mut any = false;
                for i in 0..n {
                    if graphs[i].adjacency.get(pis[i].mapping[v], pis[i].mapping[w]) != 0 {
                        any = true;
                        p_raw += weights[i];
                    }
                }
                if !any && !truth {
                    continue;
                }
                let p = (p_raw + epsilon).clamp(epsilon, 1.0 - epsilon);
                sum_b += if truth { -p.ln() } else { -(1.0 - p).ln() };
            }
        }
        total += sum_b / (vb * (vb - 1)) as f64;
    }
    Ok(total / n as f64)
}

// ── tape builders ───────────────────────────────────────────────────────

/// `1x1` sum of all entries via two matmuls with constant ones vectors.
fn sum_all<S: Scalar>(tape: &mut Tape<S>, x: VarId, rows: usize, cols: usize) -> VarId {
    let ones_row = tape.leaf(Tensor::from_vec(1, rows, vec![S::one(); rows]));
    let col_sums = tape.matmul(ones_row, x);
    let ones_col = tape.leaf(Tensor::from_vec(cols, 1, vec![S::one(); cols]));
    tape.matmul(col_sums, ones_col)
}

/// `clamp(x, lo, hi)` composed from relu: `x - relu(x - hi) + relu(lo - x)`.
fn clamp_var<S: Scalar>(tape: &mut Tape<S>, x: VarId, lo: f64, hi: f64) -> VarId {
    let neg_hi = tape.leaf(Tensor::from_vec(1, 1, vec![S::from_f64(-hi)]));
    let over = tape.add(x, neg_hi);
    let over_r = tape.relu(over);
    let neg_x = tape.scale(x, S::from_f64(-1.0));
    let lo_leaf = tape.leaf(Tensor::from_vec(1, 1, vec![S::from_f64(lo)]));
    let under = tape.add(neg_x, lo_leaf);
    let under_r = tape.relu(under);
    let neg_over = tape.scale(over_r, S::from_f64(-1.0));
    let capped = tape.add(x, neg_over);
    tape.add(capped, under_r)
}

/// Builds the full loss for a batch on the tape: encodes both sides,
/// forms the (optionally scaled) similarity matrix, and combines the
/// three terms. Returns the term handles; differentiate `total`.
pub fn total_loss_tape<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &TapeParams,
    graph_cfg: &GraphEncoderConfig,
    feature_cfg: &FeatureEncoderConfig,
    batch: &[&PairedSample],
    cfg: &TrainConfig,
) -> TrainResult<LossVars> {
    cfg.check()?;
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = batch.len();
    let features: Vec<Vec<f64>> = batch.iter().map(|s| s.features.clone()).collect();
    let graphs: Vec<&NodeGraph> = batch.iter().map(|s| &s.graph).collect();

    let img = feature_encode_tape(tape, pv, feature_cfg, &features)?;
    let gph = graph_encode_tape(tape, pv, graph_cfg, &graphs)?;
    let img_n = tape.l2_normalize_rows(img)?;
    let gph_n = tape.l2_normalize_rows(gph)?;
    let mut alpha = tape.matmul_nt(img_n, gph_n);
    // The transposed similarities come from swapping the factors, since
    // the tape has no transpose primitive.
    let mut alpha_t = tape.matmul_nt(gph_n, img_n);
    if cfg.scale != 1.0 {
        alpha = tape.scale(alpha, S::from_f64(cfg.scale));
        alpha_t = tape.scale(alpha_t, S::from_f64(cfg.scale));
    }
    let full = vec![true; n * n];
    let sm_row = tape.masked_softmax_rows(alpha, &full)?;
    // Row b of the transposed softmax holds the retrieval weights over
    // candidates when element b is the ground truth; it doubles as the
    // column term of the contrastive loss.
    let sm_col = tape.masked_softmax_rows(alpha_t, &full)?;

    // Contrastive: -mean of diagonal log-softmaxes, both directions.
    let eye = {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, i, S::one());
        }
        tape.leaf(t)
    };
    let log_row = tape.log(sm_row)?;
    let log_col = tape.log(sm_col)?;
    let diag_row = tape.mul(log_row, eye);
    let diag_col = tape.mul(log_col, eye);
    let diag_sum = tape.add(diag_row, diag_col);
    let summed = sum_all(tape, diag_sum, n, n);
    let contrastive = tape.scale(summed, S::from_f64(-0.5 / n as f64));

    // Correspondences and displacement constants, reused by both
    // graph-similarity terms. Gradients flow through the softmax
    // weights only.
    let mut pis_all = Vec::with_capacity(n);
    let mut dmat = Vec::with_capacity(n);
    for b in 0..n {
        let (pis, mean_dists) = correspondences_from(&graphs, b)?;
        pis_all.push(pis);
        dmat.push(mean_dists);
    }

    // Chamfer credit: weights (row b of sm_col) dotted with constant
    // mean displacements.
    let d_leaf = tape.leaf(Tensor::from_f64_rows(&dmat));
    let weighted = tape.mul(sm_col, d_leaf);
    let chamfer_sum = sum_all(tape, weighted, n, n);
    let chamfer = tape.scale(chamfer_sum, S::from_f64(1.0 / n as f64));

    // Edge BCE per ground-truth element.
    let eps = cfg.bce_epsilon;
    let eps_leaf = tape.leaf(Tensor::from_vec(1, 1, vec![S::from_f64(eps)]));
    let one_leaf = tape.leaf(Tensor::from_vec(1, 1, vec![S::one()]));
    let mut edge_acc: Option<VarId> = None;
    for b in 0..n {
        let gb = graphs[b];
        let vb = gb.node_count();
        if vb < 2 {
            continue;
        }
        let pis = &pis_all[b];
        // Kept ordered pairs: candidate edge votes as constant rows,
        // with the ground-truth labels split into positive/negative
        // selectors.
        let mut votes: Vec<Vec<f64>> = Vec::new();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for v in 0..vb {
            for w in 0..vb {
                if v == w {
                    continue;
                }
                let truth = gb.adjacency.get(v, w) != 0;
                let row: Vec<f64> = (0..n)
                    .map(|i| {
                        (graphs[i].adjacency.get(pis[i].mapping[v], pis[i].mapping[w]) != 0) as u8
                            as f64
                    })
                    .collect();
                if !truth && row.iter().all(|&e| e == 0.0) {
                    continue;
                }
                votes.push(row);
                pos.push(if truth { S::one() } else { S::zero() });
                neg.push(if truth { S::zero() } else { S::one() });
            }
        }
        if votes.is_empty() {
            continue;
        }
        let pairs = votes.len();
        let votes_leaf = tape.leaf(Tensor::from_f64_rows(&votes));
        let wb = tape.row_select(sm_col, &[b]);
        let p_raw = tape.matmul_nt(votes_leaf, wb);
        let p_shift = tape.add(p_raw, eps_leaf);
        let p = clamp_var(tape, p_shift, eps, 1.0 - eps);
        let log_p = tape.log(p)?;
        let neg_p = tape.scale(p, S::from_f64(-1.0));
        let one_minus_p = tape.add(neg_p, one_leaf);
        let log_q = tape.log(one_minus_p)?;
        let pos_leaf = tape.leaf(Tensor::from_vec(pairs, 1, pos));
        let neg_leaf = tape.leaf(Tensor::from_vec(pairs, 1, neg));
        let pos_term = tape.mul(pos_leaf, log_p);
        let neg_term = tape.mul(neg_leaf, log_q);
        let combined = tape.add(pos_term, neg_term);
        let summed = sum_all(tape, combined, pairs, 1);
        let term = tape.scale(summed, S::from_f64(-1.0 / (vb * (vb - 1)) as f64));
        edge_acc = Some(match edge_acc {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let edge = match edge_acc {
        None => tape.leaf(Tensor::zeros(1, 1)),
        Some(acc) => tape.scale(acc, S::from_f64(1.0 / n as f64)),
    };

    let w1 = tape.scale(contrastive, S::from_f64(cfg.omega1));
    let w2 = tape.scale(chamfer, S::from_f64(cfg.omega2));
    let w3 = tape.scale(edge, S::from_f64(cfg.omega3));
    let w12 = tape.add(w1, w2);
    let total = tape.add(w12, w3);
    Ok(LossVars { contrastive, chamfer, edge, total })
}

fn scalar_value<S: Scalar>(tape: &Tape<S>, id: VarId) -> f64 {
    tape.value(id).as_slice()[0].to_f64()
}

fn breakdown_from<S: Scalar>(tape: &Tape<S>, vars: &LossVars, cfg: &TrainConfig) -> LossBreakdown {
    let contrastive = scalar_value(tape, vars.contrastive);
    let chamfer = scalar_value(tape, vars.chamfer);
    let edge = scalar_value(tape, vars.edge);
    // The reported total is the f64 combination of the reported terms,
    // so the breakdown invariant holds at working precision too; the
    // tape's own total drives the gradient.
    let total = cfg.omega1 * contrastive + cfg.omega2 * chamfer + cfg.omega3 * edge;
    LossBreakdown { contrastive, chamfer, edge, total }
}

/// Forward-only loss evaluation on a scratch tape.
pub fn total_loss<S: Scalar>(
    params: &ModelParams<S>,
    batch: &[&PairedSample],
    cfg: &TrainConfig,
) -> TrainResult<LossBreakdown> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let vars = total_loss_tape(&mut tape, &pv, &params.graph_cfg, &params.feature_cfg, batch, cfg)?;
    Ok(breakdown_from(&tape, &vars, cfg))
}

fn loss_step<S: Scalar>(
    params: &ModelParams<S>,
    batch: &[&PairedSample],
    cfg: &TrainConfig,
) -> TrainResult<(LossBreakdown, Vec<Tensor<S>>)> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let vars = total_loss_tape(&mut tape, &pv, &params.graph_cfg, &params.feature_cfg, batch, cfg)?;
    let grads = tape.backward(vars.total)?;
    let breakdown = breakdown_from(&tape, &vars, cfg);
    let grad_list = pv.flat.iter().map(|&id| grads.get(id)).collect();
    Ok((breakdown, grad_list))
}

// ── optimizer and loop ──────────────────────────────────────────────────

/// Adam with bias correction, state per weight tensor in canonical
/// order.
pub struct Adam<S> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: u32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let zeros: Vec<Tensor<S>> =
            params.tensor_list().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &[Tensor<S>], cfg: &TrainConfig) {
        self.t += 1;
        let b1 = S::from_f64(cfg.adam_beta1);
        let b2 = S::from_f64(cfg.adam_beta2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - cfg.adam_beta1.powi(self.t as i32));
        let corr2 = S::from_f64(1.0 - cfg.adam_beta2.powi(self.t as i32));
        let lr = S::from_f64(cfg.learning_rate);
        let eps = S::from_f64(cfg.adam_eps);
        let tensors = params.tensor_list_mut();
        assert_eq!(tensors.len(), grads.len(), "gradient list must match parameter list");
        for (((p, g), m), v) in
            tensors.into_iter().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut())
        {
            let ps = p.as_mut_slice();
            let gs = g.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            assert_eq!(ps.len(), gs.len(), "gradient shape must match parameter shape");
            for i in 0..ps.len() {
                ms[i] = b1 * ms[i] + (one - b1) * gs[i];
                vs[i] = b2 * vs[i] + (one - b2) * gs[i] * gs[i];
                let m_hat = ms[i] / corr1;
                let v_hat = vs[i] / corr2;
                ps[i] = ps[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Initializes parameters from the train seed and runs the loop.
pub fn train<S: Scalar>(
    dataset: &[PairedSample],
    graph_cfg: GraphEncoderConfig,
    feature_cfg: FeatureEncoderConfig,
    cfg: &TrainConfig,
) -> TrainResult<(ModelParams<S>, Vec<LossBreakdown>)> {
    let params = ModelParams::init(graph_cfg, feature_cfg, cfg.seed)?;
    train_from(params, dataset, cfg)
}

/// Runs seeded-shuffle minibatch Adam from the given initial
/// parameters, returning the trained parameters and the per-epoch
/// sample-weighted mean loss breakdown.
pub fn train_from<S: Scalar>(
    mut params: ModelParams<S>,
    dataset: &[PairedSample],
    cfg: &TrainConfig,
) -> TrainResult<(ModelParams<S>, Vec<LossBreakdown>)> {
    cfg.check()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.batch_size > dataset.len() {
        return Err(TrainError::BatchTooLarge {
            batch_size: cfg.batch_size,
            dataset: dataset.len(),
        });
    }
    // Validate every sample up front so mid-loop tape failures can only
    // be numeric, which the loop reports as divergence.
    for (index, sample) in dataset.iter().enumerate() {
        if sample.features.len() != params.feature_cfg.input_dim {
            return Err(TrainError::BadSample {
                index,
                message: format!(
                    "feature vector has length {}, encoder expects {}",
                    sample.features.len(),
                    params.feature_cfg.input_dim
                ),
            });
        }
        if !sample.features.iter().all(|f| f.is_finite()) {
            return Err(TrainError::BadSample { index, message: "non-finite feature".into() });
        }
        node_input_features(&sample.graph, &params.graph_cfg)
            .and_then(|_| build_attention_mask(&sample.graph, &params.graph_cfg))
            .map_err(|e| TrainError::BadSample { index, message: e.to_string() })?;
    }
    // With zero-initialised biases a relu MLP can map an unlucky sample to
    // an exactly-zero embedding, which the cosine similarity cannot
    // normalize. Catch that before the loop so the caller gets the sample
    // index instead of a mid-epoch failure.
    for (ci, chunk) in dataset.chunks(cfg.batch_size).enumerate() {
        let chunk_start = ci * cfg.batch_size;
        let feats: Vec<Vec<f64>> = chunk.iter().map(|s| s.features.clone()).collect();
        let img = feature_encode_batch(&params, &feats)?;
        let graphs: Vec<&NodeGraph> = chunk.iter().map(|s| &s.graph).collect();
        let gph = graph_encode_batch(&params, &graphs)?;
        for (offset, (fe, ge)) in img.iter().zip(gph.iter()).enumerate() {
            let index = chunk_start + offset;
            let dead = |e: &[S]| !e.iter().map(|&x| x.to_f64()).map(|x| x * x).sum::<f64>().is_normal();
            if dead(fe) {
                return Err(TrainError::BadSample {
                    index,
                    message: "feature embedding is zero (or non-finite) at initialization; \
                              widen the hidden layers or change the seed"
                        .into(),
                });
            }
            if dead(ge) {
                return Err(TrainError::BadSample {
                    index,
                    message: "graph embedding is zero (or non-finite) at initialization; \
                              widen the hidden layers or change the seed"
                        .into(),
                });
            }
        }
    }

    let mut adam = Adam::new(&params);
    // Stream 1 keeps the shuffle decoupled from parameter init, which
    // draws from stream 0 of the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown { contrastive: 0.0, chamfer: 0.0, edge: 0.0, total: 0.0 };
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PairedSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (breakdown, grads) = loss_step(&params, &batch, cfg).map_err(|e| match e {
                TrainError::Autodiff(inner) => TrainError::Diverged {
                    epoch,
                    batch: bi,
                    message: inner.to_string(),
                },
                TrainError::Encoder(EncoderError::Autodiff(inner)) => TrainError::Diverged {
                    epoch,
                    batch: bi,
                    message: inner.to_string(),
                },
                other => other,
            })?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: bi,
                    message: format!("non-finite loss {}", breakdown.total),
                });
            }
            adam.step(&mut params, &grads, cfg);
            let w = chunk.len() as f64;
            sums.contrastive += breakdown.contrastive * w;
            sums.chamfer += breakdown.chamfer * w;
            sums.edge += breakdown.edge * w;
            sums.total += breakdown.total * w;
        }
        let n = dataset.len() as f64;
        history.push(LossBreakdown {
            contrastive: sums.contrastive / n,
            chamfer: sums.chamfer / n,
            edge: sums.edge / n,
            total: sums.total / n,
        });
    }
    Ok((params, history))
}

/// Renders a loss history as CSV with a fixed canonical float format.
pub fn history_csv(history: &[LossBreakdown]) -> String {
    let mut out = String::from("epoch,contrastive,chamfer,edge,total\n");
    let fmt = |x: f64| crate::lanegraph::fmt_sig(x, 9);
    for (epoch, h) in history.iter().enumerate() {
        out.push_str(&format!(
            "{epoch},{},{},{},{}\n",
            fmt(h.contrastive),
            fmt(h.chamfer),
            fmt(h.edge),
            fmt(h.total)
        ));
    }
    out
}

#[cfg(test)]
mod tests;
