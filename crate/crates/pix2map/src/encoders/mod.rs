//! The two encoders that map into the shared embedding space: a
//! masked-attention transformer over lane graphs and a multilayer
//! perceptron over sensor feature vectors.
//!
//! The forward pass is written once, against the autodiff tape; training
//! differentiates through it and inference replays it on a scratch tape
//! and reads the value off.

mod params;

pub use params::{tape_params_from_flat, LayerParams, ModelParams, TapeLayer, TapeParams};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, VarId};
use crate::lanegraph::NodeGraph;
use crate::Scalar;

/// Width of the sinusoidal index encoding when
/// `use_positional_encoding` is on.
pub const POSITIONAL_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("bad encoder config: {0}")]
    BadConfig(String),
    #[error("cannot encode an empty graph")]
    EmptyGraph,
    #[error("graph has {nodes} nodes, adjacency input supports at most {max}")]
    TooManyNodes { nodes: usize, max: usize },
    #[error("node {node} is isolated and self-loop masking is off")]
    IsolatedNode { node: usize },
    #[error("feature vector has length {got}, encoder expects {want}")]
    FeatureLength { got: usize, want: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad params file: {message}")]
    BadParamsFile { path: String, message: String },
}

pub type EncResult<T> = Result<T, EncoderError>;

/// A d-dimensional embedding vector, one per graph or feature input.
pub type Embedding<S> = Vec<S>;

/// Graph-encoder architecture and ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoderConfig {
    /// Transformer layer count M.
    pub layers: usize,
    /// Embedding width d (shared with the feature encoder).
    pub embed_dim: usize,
    /// Attention heads; must divide `embed_dim`.
    pub heads: usize,
    /// Restrict attention to graph edges (off = full attention).
    pub use_attention_mask: bool,
    /// Append the node's adjacency row to its input features.
    pub use_adjacency_input: bool,
    /// Append a sinusoidal index encoding to node input features.
    pub use_positional_encoding: bool,
    /// Admit each node to attend to itself.
    pub mask_self_loops: bool,
    /// OR the adjacency with its transpose so information flows both ways.
    pub mask_symmetrize: bool,
    /// Fixed adjacency-row width; graphs beyond this are rejected when
    /// `use_adjacency_input` is on.
    pub max_node_count: usize,
    /// Coordinate scale: positions are divided by this before encoding.
    pub half_extent: f64,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        Self {
            layers: 7,
            embed_dim: 64,
            heads: 4,
            use_attention_mask: true,
            use_adjacency_input: true,
            use_positional_encoding: false,
            mask_self_loops: true,
            mask_symmetrize: true,
            max_node_count: 256,
            half_extent: 20.0,
        }
    }
}

impl GraphEncoderConfig {
    pub fn check(&self) -> EncResult<()> {
        if self.layers == 0 {
            return Err(EncoderError::BadConfig("layer count must be >= 1".into()));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(EncoderError::BadConfig(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.max_node_count == 0 {
            return Err(EncoderError::BadConfig("max_node_count must be positive".into()));
        }
        if !(self.half_extent > 0.0) {
            return Err(EncoderError::BadConfig("half_extent must be positive".into()));
        }
        Ok(())
    }

    /// Width of the pre-projection node input row.
    pub fn input_width(&self) -> usize {
        let mut w = 2;
        if self.use_adjacency_input {
            w += self.max_node_count;
        }
        if self.use_positional_encoding {
            w += POSITIONAL_DIM;
        }
        w
    }
}

/// How multiple sensor views combine in the feature encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Views arrive pre-concatenated; one MLP pass over the whole vector.
    Early,
    /// Each view is encoded separately with shared weights, then averaged.
    Late,
}

/// Feature-encoder (image-side stand-in) architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoderConfig {
    /// Total input length (all views concatenated).
    pub input_dim: usize,
    /// Hidden layer widths of the MLP.
    pub hidden_dims: Vec<usize>,
    /// Output width; must equal the graph encoder's `embed_dim`.
    pub embed_dim: usize,
    pub fusion: Fusion,
    /// Number of sensor views; `input_dim` must split evenly across
    /// views for late fusion.
    pub views: usize,
}

impl FeatureEncoderConfig {
    pub fn check(&self) -> EncResult<()> {
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(EncoderError::BadConfig("feature dims must be positive".into()));
        }
        if self.views == 0 {
            return Err(EncoderError::BadConfig("view count must be >= 1".into()));
        }
        if self.input_dim % self.views != 0 {
            return Err(EncoderError::BadConfig(format!(
                "input_dim {} does not split into {} views",
                self.input_dim, self.views
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(EncoderError::BadConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Input width of the underlying MLP (per-view width under late
    /// fusion, the full vector under early fusion).
    pub fn mlp_input_dim(&self) -> usize {
        match self.fusion {
            Fusion::Early => self.input_dim,
            Fusion::Late => self.input_dim / self.views,
        }
    }

    /// The MLP layer dimensions: input -> hidden* -> embed.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.mlp_input_dim();
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.embed_dim));
        dims
    }
}

// ── attention mask and input features ──────────────────────────────────

/// Builds the row-major boolean attention mask for one graph: the
/// adjacency, optionally OR-ed with its transpose and the identity;
/// all-ones when masking is off. Every row must admit at least one
/// entry.
pub fn build_attention_mask(g: &NodeGraph, cfg: &GraphEncoderConfig) -> EncResult<Vec<bool>> {
    let n = g.node_count();
    if !cfg.use_attention_mask {
        return Ok(vec![true; n * n]);
    }
    let mut mask = vec![false; n * n];
    for (v, w) in g.adjacency.edges() {
        mask[v * n + w] = true;
        if cfg.mask_symmetrize {
            mask[w * n + v] = true;
        }
    }
    if cfg.mask_self_loops {
        for v in 0..n {
            mask[v * n + v] = true;
        }
    }
    for v in 0..n {
        if !mask[v * n..(v + 1) * n].iter().any(|&m| m) {
            return Err(EncoderError::IsolatedNode { node: v });
        }
    }
    Ok(mask)
}

/// Pre-projection input features, one row per node: scaled coordinates,
/// optionally the (padded) adjacency row, optionally a sinusoidal index
/// encoding. Width is [`GraphEncoderConfig::input_width`].
pub fn node_input_features(g: &NodeGraph, cfg: &GraphEncoderConfig) -> EncResult<Vec<Vec<f64>>> {
    let n = g.node_count();
    if n == 0 {
        return Err(EncoderError::EmptyGraph);
    }
    if cfg.use_adjacency_input && n > cfg.max_node_count {
        return Err(EncoderError::TooManyNodes { nodes: n, max: cfg.max_node_count });
    }
    let mut rows = Vec::with_capacity(n);
    for v in 0..n {
        let mut row = Vec::with_capacity(cfg.input_width());
        row.push(g.positions[v][0] / cfg.half_extent);
        row.push(g.positions[v][1] / cfg.half_extent);
        if cfg.use_adjacency_input {
            for w in 0..cfg.max_node_count {
                row.push(if w < n { g.adjacency.get(v, w) as f64 } else { 0.0 });
            }
        }
        if cfg.use_positional_encoding {
            for k in 0..POSITIONAL_DIM / 2 {
                let rate = 1.0 / 10000f64.powf(2.0 * k as f64 / POSITIONAL_DIM as f64);
                let angle = v as f64 * rate;
                row.push(angle.sin());
                row.push(angle.cos());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

// ── forward passes on the tape ──────────────────────────────────────────

/// Encodes a batch of graphs, returning the `N x d` embedding matrix
/// var (one pooled row per graph).
pub fn graph_encode_tape<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &TapeParams,
    cfg: &GraphEncoderConfig,
    graphs: &[&NodeGraph],
) -> EncResult<VarId> {
    let (x, groups) = graph_node_states_tape(tape, pv, cfg, graphs)?;
    Ok(tape.mean_pool_row_groups(x, &groups))
}

/// Runs the transformer and returns the stacked per-node states before
/// pooling, along with each graph's `(start, len)` row block. Graphs
/// are stacked into one node matrix; the shared projections run on the
/// stack and attention runs per graph block, so cost grows with the sum
/// of squared graph sizes rather than the square of the batch total.
pub fn graph_node_states_tape<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &TapeParams,
    cfg: &GraphEncoderConfig,
    graphs: &[&NodeGraph],
) -> EncResult<(VarId, Vec<(usize, usize)>)> {
    cfg.check()?;
    assert!(!graphs.is_empty(), "graph_node_states_tape needs at least one graph");
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut groups = Vec::with_capacity(graphs.len());
    let mut masks = Vec::with_capacity(graphs.len());
    for g in graphs {
        let rows = node_input_features(g, cfg)?;
        masks.push(build_attention_mask(g, cfg)?);
        groups.push((feature_rows.len(), rows.len()));
        feature_rows.extend(rows);
    }
    let x0 = tape.leaf(Tensor::from_f64_rows(&feature_rows));
    let projected = tape.matmul(x0, pv.node_proj);
    let mut x = tape.add(projected, pv.node_proj_b);

    let head_dim = cfg.embed_dim / cfg.heads;
    let score_scale = S::from_f64(1.0 / (head_dim as f64).sqrt());
    let row_indices: Vec<Vec<usize>> =
        groups.iter().map(|&(start, len)| (start..start + len).collect()).collect();

    for layer in &pv.layers {
        // Shared Q/K/V projections over the whole stack, per head.
        let mut q_heads = Vec::with_capacity(cfg.heads);
        let mut k_heads = Vec::with_capacity(cfg.heads);
        let mut v_heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let q = tape.matmul(x, layer.wq[h]);
            q_heads.push(tape.add(q, layer.bq[h]));
            let k = tape.matmul(x, layer.wk[h]);
            k_heads.push(tape.add(k, layer.bk[h]));
            let v = tape.matmul(x, layer.wv[h]);
            v_heads.push(tape.add(v, layer.bv[h]));
        }

        // Attention within each graph's block only.
        let mut graph_ctxs = Vec::with_capacity(graphs.len());
        for (gi, indices) in row_indices.iter().enumerate() {
            let mut head_ctxs = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let q = tape.row_select(q_heads[h], indices);
                let k = tape.row_select(k_heads[h], indices);
                let v = tape.row_select(v_heads[h], indices);
                let scores = tape.matmul_nt(q, k);
                let scaled = tape.scale(scores, score_scale);
                let att = tape.masked_softmax_rows(scaled, &masks[gi])?;
                head_ctxs.push(tape.matmul(att, v));
            }
            graph_ctxs.push(tape.concat_cols(&head_ctxs));
        }
        let ctx = tape.concat_rows(&graph_ctxs);
        let proj = tape.matmul(ctx, layer.wo);
        let attn_out = tape.add(proj, layer.bo);

        // Post-norm residual blocks, then a 2x-width feed-forward.
        let res1 = tape.add(x, attn_out);
        let normed1 = tape.layer_norm_rows(res1, layer.ln1_gamma, layer.ln1_beta);
        let h1 = tape.matmul(normed1, layer.ff1);
        let h1b = tape.add(h1, layer.ff1_b);
        let h1r = tape.relu(h1b);
        let h2 = tape.matmul(h1r, layer.ff2);
        let ff_out = tape.add(h2, layer.ff2_b);
        let res2 = tape.add(normed1, ff_out);
        x = tape.layer_norm_rows(res2, layer.ln2_gamma, layer.ln2_beta);
    }

    Ok((x, groups))
}

/// Encodes a batch of feature vectors, returning the `N x d` embedding
/// matrix var.
pub fn feature_encode_tape<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &TapeParams,
    cfg: &FeatureEncoderConfig,
    features: &[Vec<f64>],
) -> EncResult<VarId> {
    cfg.check()?;
    assert!(!features.is_empty(), "feature_encode_tape needs at least one sample");
    for f in features {
        if f.len() != cfg.input_dim {
            return Err(EncoderError::FeatureLength { got: f.len(), want: cfg.input_dim });
        }
    }
    let run_mlp = |tape: &mut Tape<S>, mut x: VarId| -> VarId {
        let last = pv.feature_layers.len() - 1;
        for (i, &(w, b)) in pv.feature_layers.iter().enumerate() {
            let lin = tape.matmul(x, w);
            x = tape.add(lin, b);
            if i < last {
                x = tape.relu(x);
            }
        }
        x
    };
    match cfg.fusion {
        Fusion::Early => {
            let x = tape.leaf(Tensor::from_f64_rows(features));
            Ok(run_mlp(tape, x))
        }
        Fusion::Late => {
            let view_dim = cfg.input_dim / cfg.views;
            let mut acc: Option<VarId> = None;
            for view in 0..cfg.views {
                let rows: Vec<Vec<f64>> = features
                    .iter()
                    .map(|f| f[view * view_dim..(view + 1) * view_dim].to_vec())
                    .collect();
                let x = tape.leaf(Tensor::from_f64_rows(&rows));
                let enc = run_mlp(tape, x);
                acc = Some(match acc {
                    None => enc,
                    Some(a) => tape.add(a, enc),
                });
            }
            let total = acc.expect("views >= 1 checked in config");
            Ok(tape.scale(total, S::from_f64(1.0 / cfg.views as f64)))
        }
    }
}

// ── inference wrappers ─────────────────────────────────────────────────

/// Encodes graphs on a scratch tape and reads the embeddings off.
pub fn graph_encode_batch<S: Scalar>(
    params: &ModelParams<S>,
    graphs: &[&NodeGraph],
) -> EncResult<Vec<Embedding<S>>> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let out = graph_encode_tape(&mut tape, &pv, &params.graph_cfg, graphs)?;
    let value = tape.value(out);
    Ok((0..value.rows()).map(|r| value.row(r).to_vec()).collect())
}

pub fn graph_encode<S: Scalar>(params: &ModelParams<S>, g: &NodeGraph) -> EncResult<Embedding<S>> {
    Ok(graph_encode_batch(params, &[g])?.remove(0))
}

pub fn feature_encode_batch<S: Scalar>(
    params: &ModelParams<S>,
    features: &[Vec<f64>],
) -> EncResult<Vec<Embedding<S>>> {
    let mut tape = Tape::new();
    let pv = params.leaves(&mut tape);
    let out = feature_encode_tape(&mut tape, &pv, &params.feature_cfg, features)?;
    let value = tape.value(out);
    Ok((0..value.rows()).map(|r| value.row(r).to_vec()).collect())
}

pub fn feature_encode<S: Scalar>(params: &ModelParams<S>, features: &[f64]) -> EncResult<Embedding<S>> {
    Ok(feature_encode_batch(params, &[features.to_vec()])?.remove(0))
}
