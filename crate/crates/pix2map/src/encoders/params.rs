//! Trainable weights of both encoders, their seeded initialization and
//! the `P2M1` binary file format.
//!
//! The canonical tensor order (node projection, attention layers in
//! order with per-head Q/K/V, output projection, norms, feed-forward,
//! then feature-encoder layers) is shared by [`ModelParams::tensor_list`],
//! [`ModelParams::leaves`], and the serializer; all three must stay in
//! step.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncResult, EncoderError, FeatureEncoderConfig, Fusion, GraphEncoderConfig};
use crate::autodiff::{Tape, Tensor, VarId};
use crate::Scalar;

const MAGIC: &[u8; 4] = b"P2M1";

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Option<&'a [u8]> {
    let slice = bytes.get(*at..*at + n)?;
    *at += n;
    Some(slice)
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Option<u32> {
    Some(u32::from_le_bytes(take(bytes, at, 4)?.try_into().expect("4 bytes")))
}

fn read_f32(bytes: &[u8], at: &mut usize) -> Option<f32> {
    Some(f32::from_le_bytes(take(bytes, at, 4)?.try_into().expect("4 bytes")))
}

/// One transformer layer: per-head Q/K/V projections with biases, the
/// head-concat output projection, two layer norms and the feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub wq: Vec<Tensor<S>>,
    pub bq: Vec<Tensor<S>>,
    pub wk: Vec<Tensor<S>>,
    pub bk: Vec<Tensor<S>>,
    pub wv: Vec<Tensor<S>>,
    pub bv: Vec<Tensor<S>>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
    pub ln1_gamma: Tensor<S>,
    pub ln1_beta: Tensor<S>,
    pub ff1: Tensor<S>,
    pub ff1_b: Tensor<S>,
    pub ff2: Tensor<S>,
    pub ff2_b: Tensor<S>,
    pub ln2_gamma: Tensor<S>,
    pub ln2_beta: Tensor<S>,
}

/// All trainable weights plus the configs they were shaped for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub graph_cfg: GraphEncoderConfig,
    pub feature_cfg: FeatureEncoderConfig,
    pub node_proj: Tensor<S>,
    pub node_proj_b: Tensor<S>,
    pub layers: Vec<LayerParams<S>>,
    pub feature_layers: Vec<(Tensor<S>, Tensor<S>)>,
}

/// Tape handles of one layer's weights, mirroring [`LayerParams`].
pub struct TapeLayer {
    pub wq: Vec<VarId>,
    pub bq: Vec<VarId>,
    pub wk: Vec<VarId>,
    pub bk: Vec<VarId>,
    pub wv: Vec<VarId>,
    pub bv: Vec<VarId>,
    pub wo: VarId,
    pub bo: VarId,
    pub ln1_gamma: VarId,
    pub ln1_beta: VarId,
    pub ff1: VarId,
    pub ff1_b: VarId,
    pub ff2: VarId,
    pub ff2_b: VarId,
    pub ln2_gamma: VarId,
    pub ln2_beta: VarId,
}

/// Tape handles of all weights, in the same canonical order as
/// [`ModelParams::tensor_list`] (exposed via `flat` for optimizers).
pub struct TapeParams {
    pub node_proj: VarId,
    pub node_proj_b: VarId,
    pub layers: Vec<TapeLayer>,
    pub feature_layers: Vec<(VarId, VarId)>,
    pub flat: Vec<VarId>,
}

/// Rebuilds the nested tape-handle structure from a flat leaf list in
/// canonical order — the inverse of [`ModelParams::leaves`]'
/// flattening. Gradient checking registers perturbed copies of every
/// weight tensor as leaves and hands them back flat; this recovers the
/// structure the forward pass needs.
pub fn tape_params_from_flat(
    flat: &[VarId],
    graph_cfg: &GraphEncoderConfig,
    feature_cfg: &FeatureEncoderConfig,
) -> TapeParams {
    let mut it = flat.iter().copied();
    let mut next = move || it.next().expect("flat leaf list shorter than the configs require");
    let node_proj = next();
    let node_proj_b = next();
    let mut layers = Vec::with_capacity(graph_cfg.layers);
    for _ in 0..graph_cfg.layers {
        let mut wq = Vec::with_capacity(graph_cfg.heads);
        let mut bq = Vec::with_capacity(graph_cfg.heads);
        let mut wk = Vec::with_capacity(graph_cfg.heads);
        let mut bk = Vec::with_capacity(graph_cfg.heads);
        let mut wv = Vec::with_capacity(graph_cfg.heads);
        let mut bv = Vec::with_capacity(graph_cfg.heads);
        for _ in 0..graph_cfg.heads {
            wq.push(next());
            bq.push(next());
            wk.push(next());
            bk.push(next());
            wv.push(next());
            bv.push(next());
        }
        layers.push(TapeLayer {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo: next(),
            bo: next(),
            ln1_gamma: next(),
            ln1_beta: next(),
            ff1: next(),
            ff1_b: next(),
            ff2: next(),
            ff2_b: next(),
            ln2_gamma: next(),
            ln2_beta: next(),
        });
    }
    let feature_layers: Vec<(VarId, VarId)> =
        feature_cfg.layer_dims().iter().map(|_| (next(), next())).collect();
    TapeParams { node_proj, node_proj_b, layers, feature_layers, flat: flat.to_vec() }
}

fn xavier<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<S> =
        (0..rows * cols).map(|_| S::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(rows, cols, data)
}

impl<S: Scalar> ModelParams<S> {
    /// Seeded Xavier-uniform initialization; biases zero, norm scales
    /// one.
    pub fn init(
        graph_cfg: GraphEncoderConfig,
        feature_cfg: FeatureEncoderConfig,
        seed: u64,
    ) -> EncResult<Self> {
        graph_cfg.check()?;
        feature_cfg.check()?;
        if feature_cfg.embed_dim != graph_cfg.embed_dim {
            return Err(EncoderError::BadConfig(format!(
                "feature embed_dim {} != graph embed_dim {}",
                feature_cfg.embed_dim, graph_cfg.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = graph_cfg.embed_dim;
        let head_dim = d / graph_cfg.heads;
        let node_proj = xavier(&mut rng, graph_cfg.input_width(), d);
        let node_proj_b = Tensor::zeros(1, d);
        let mut layers = Vec::with_capacity(graph_cfg.layers);
        for _ in 0..graph_cfg.layers {
            let mut wq = Vec::new();
            let mut bq = Vec::new();
            let mut wk = Vec::new();
            let mut bk = Vec::new();
            let mut wv = Vec::new();
            let mut bv = Vec::new();
            for _ in 0..graph_cfg.heads {
                wq.push(xavier(&mut rng, d, head_dim));
                bq.push(Tensor::zeros(1, head_dim));
                wk.push(xavier(&mut rng, d, head_dim));
                bk.push(Tensor::zeros(1, head_dim));
                wv.push(xavier(&mut rng, d, head_dim));
                bv.push(Tensor::zeros(1, head_dim));
            }
            layers.push(LayerParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo: xavier(&mut rng, d, d),
                bo: Tensor::zeros(1, d),
                ln1_gamma: Tensor::from_vec(1, d, vec![S::one(); d]),
                ln1_beta: Tensor::zeros(1, d),
                ff1: xavier(&mut rng, d, 2 * d),
                ff1_b: Tensor::zeros(1, 2 * d),
                ff2: xavier(&mut rng, 2 * d, d),
                ff2_b: Tensor::zeros(1, d),
                ln2_gamma: Tensor::from_vec(1, d, vec![S::one(); d]),
                ln2_beta: Tensor::zeros(1, d),
            });
        }
        let feature_layers = feature_cfg
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| (xavier(&mut rng, fan_in, fan_out), Tensor::zeros(1, fan_out)))
            .collect();
        Ok(Self { graph_cfg, feature_cfg, node_proj, node_proj_b, layers, feature_layers })
    }

    /// All weight tensors in canonical order.
    pub fn tensor_list(&self) -> Vec<&Tensor<S>> {
        let mut out: Vec<&Tensor<S>> = vec![&self.node_proj, &self.node_proj_b];
        for layer in &self.layers {
            for h in 0..layer.wq.len() {
                out.extend([&layer.wq[h], &layer.bq[h], &layer.wk[h], &layer.bk[h], &layer.wv[h], &layer.bv[h]]);
            }
            out.extend([
                &layer.wo,
                &layer.bo,
                &layer.ln1_gamma,
                &layer.ln1_beta,
                &layer.ff1,
                &layer.ff1_b,
                &layer.ff2,
                &layer.ff2_b,
                &layer.ln2_gamma,
                &layer.ln2_beta,
            ]);
        }
        for (w, b) in &self.feature_layers {
            out.extend([w, b]);
        }
        out
    }

    /// Mutable view in the same canonical order.
    pub fn tensor_list_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out: Vec<&mut Tensor<S>> = vec![&mut self.node_proj, &mut self.node_proj_b];
        for layer in &mut self.layers {
            let heads = layer.wq.len();
            let mut qs = layer.wq.iter_mut();
            let mut bqs = layer.bq.iter_mut();
            let mut ks = layer.wk.iter_mut();
            let mut bks = layer.bk.iter_mut();
            let mut vs = layer.wv.iter_mut();
            let mut bvs = layer.bv.iter_mut();
            for _ in 0..heads {
                out.push(qs.next().expect("head count"));
                out.push(bqs.next().expect("head count"));
                out.push(ks.next().expect("head count"));
                out.push(bks.next().expect("head count"));
                out.push(vs.next().expect("head count"));
                out.push(bvs.next().expect("head count"));
            }
            out.extend([
                &mut layer.wo,
                &mut layer.bo,
                &mut layer.ln1_gamma,
                &mut layer.ln1_beta,
                &mut layer.ff1,
                &mut layer.ff1_b,
                &mut layer.ff2,
                &mut layer.ff2_b,
                &mut layer.ln2_gamma,
                &mut layer.ln2_beta,
            ]);
        }
        for (w, b) in &mut self.feature_layers {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Registers every weight as a tape leaf, preserving canonical order
    /// in `flat`.
    pub fn leaves(&self, tape: &mut Tape<S>) -> TapeParams {
        let mut flat = Vec::new();
        let mut leaf = |tape: &mut Tape<S>, t: &Tensor<S>| {
            let id = tape.leaf(t.clone());
            flat.push(id);
            id
        };
        let node_proj = leaf(tape, &self.node_proj);
        let node_proj_b = leaf(tape, &self.node_proj_b);
        let mut layers = Vec::with_capacity(self.layers.len());
        for lp in &self.layers {
            let heads = lp.wq.len();
            let mut layer = TapeLayer {
                wq: Vec::with_capacity(heads),
                bq: Vec::with_capacity(heads),
                wk: Vec::with_capacity(heads),
                bk: Vec::with_capacity(heads),
                wv: Vec::with_capacity(heads),
                bv: Vec::with_capacity(heads),
                // placeholders, overwritten below in canonical order
                wo: node_proj,
                bo: node_proj,
                ln1_gamma: node_proj,
                ln1_beta: node_proj,
                ff1: node_proj,
                ff1_b: node_proj,
                ff2: node_proj,
                ff2_b: node_proj,
                ln2_gamma: node_proj,
                ln2_beta: node_proj,
            };
            for h in 0..heads {
                layer.wq.push(leaf(tape, &lp.wq[h]));
                layer.bq.push(leaf(tape, &lp.bq[h]));
                layer.wk.push(leaf(tape, &lp.wk[h]));
                layer.bk.push(leaf(tape, &lp.bk[h]));
                layer.wv.push(leaf(tape, &lp.wv[h]));
                layer.bv.push(leaf(tape, &lp.bv[h]));
            }
            layer.wo = leaf(tape, &lp.wo);
            layer.bo = leaf(tape, &lp.bo);
            layer.ln1_gamma = leaf(tape, &lp.ln1_gamma);
            layer.ln1_beta = leaf(tape, &lp.ln1_beta);
            layer.ff1 = leaf(tape, &lp.ff1);
            layer.ff1_b = leaf(tape, &lp.ff1_b);
            layer.ff2 = leaf(tape, &lp.ff2);
            layer.ff2_b = leaf(tape, &lp.ff2_b);
            layer.ln2_gamma = leaf(tape, &lp.ln2_gamma);
            layer.ln2_beta = leaf(tape, &lp.ln2_beta);
            layers.push(layer);
        }
        let feature_layers = self
            .feature_layers
            .iter()
            .map(|(w, b)| (leaf(tape, w), leaf(tape, b)))
            .collect();
        TapeParams { node_proj, node_proj_b, layers, feature_layers, flat }
    }

    /// Entry-wise scalar conversion (used to run a trained `f32` model in
    /// `f64` checking mode and vice versa).
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            graph_cfg: self.graph_cfg.clone(),
            feature_cfg: self.feature_cfg.clone(),
            node_proj: self.node_proj.cast(),
            node_proj_b: self.node_proj_b.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: l.wq.iter().map(Tensor::cast).collect(),
                    bq: l.bq.iter().map(Tensor::cast).collect(),
                    wk: l.wk.iter().map(Tensor::cast).collect(),
                    bk: l.bk.iter().map(Tensor::cast).collect(),
                    wv: l.wv.iter().map(Tensor::cast).collect(),
                    bv: l.bv.iter().map(Tensor::cast).collect(),
                    wo: l.wo.cast(),
                    bo: l.bo.cast(),
                    ln1_gamma: l.ln1_gamma.cast(),
                    ln1_beta: l.ln1_beta.cast(),
                    ff1: l.ff1.cast(),
                    ff1_b: l.ff1_b.cast(),
                    ff2: l.ff2.cast(),
                    ff2_b: l.ff2_b.cast(),
                    ln2_gamma: l.ln2_gamma.cast(),
                    ln2_beta: l.ln2_beta.cast(),
                })
                .collect(),
            feature_layers: self
                .feature_layers
                .iter()
                .map(|(w, b)| (w.cast(), b.cast()))
                .collect(),
        }
    }

    /// Serializes to the `P2M1` binary format: magic, config block,
    /// then every tensor in canonical order as rank + dims + f32 data,
    /// all little-endian.
    pub fn save(&self, path: &Path) -> EncResult<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        let g = &self.graph_cfg;
        for v in [
            g.layers as u32,
            g.embed_dim as u32,
            g.heads as u32,
            g.use_attention_mask as u32,
            g.use_adjacency_input as u32,
            g.use_positional_encoding as u32,
            g.mask_self_loops as u32,
            g.mask_symmetrize as u32,
            g.max_node_count as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(g.half_extent as f32).to_le_bytes());
        let f = &self.feature_cfg;
        for v in [
            f.input_dim as u32,
            f.embed_dim as u32,
            match f.fusion {
                Fusion::Early => 0u32,
                Fusion::Late => 1u32,
            },
            f.views as u32,
            f.hidden_dims.len() as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &h in &f.hidden_dims {
            buf.extend_from_slice(&(h as u32).to_le_bytes());
        }
        let tensors = self.tensor_list();
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            buf.extend_from_slice(&2u32.to_le_bytes());
            buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &v in t.as_slice() {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
        crate::fsutil::write_atomic(path, &buf)
            .map_err(|source| EncoderError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> EncResult<Self> {
        let bytes = std::fs::read(path)
            .map_err(|source| EncoderError::Io { path: path.display().to_string(), source })?;
        let bad = |message: String| EncoderError::BadParamsFile {
            path: path.display().to_string(),
            message,
        };
        let mut at = 0usize;
        let magic = take(&bytes, &mut at, 4).ok_or_else(|| bad("missing P2M1 magic".into()))?;
        if magic != MAGIC {
            return Err(bad("missing P2M1 magic".into()));
        }
        let u32s = |at: &mut usize| {
            read_u32(&bytes, at).ok_or_else(|| bad(format!("truncated at byte {}", *at)))
        };
        let graph_cfg = GraphEncoderConfig {
            layers: u32s(&mut at)? as usize,
            embed_dim: u32s(&mut at)? as usize,
            heads: u32s(&mut at)? as usize,
            use_attention_mask: u32s(&mut at)? != 0,
            use_adjacency_input: u32s(&mut at)? != 0,
            use_positional_encoding: u32s(&mut at)? != 0,
            mask_self_loops: u32s(&mut at)? != 0,
            mask_symmetrize: u32s(&mut at)? != 0,
            max_node_count: u32s(&mut at)? as usize,
            half_extent: read_f32(&bytes, &mut at)
                .ok_or_else(|| bad(format!("truncated at byte {at}")))?
                as f64,
        };
        let input_dim = u32s(&mut at)? as usize;
        let embed_dim = u32s(&mut at)? as usize;
        let fusion = match u32s(&mut at)? {
            0 => Fusion::Early,
            1 => Fusion::Late,
            other => return Err(bad(format!("unknown fusion tag {other}"))),
        };
        let views = u32s(&mut at)? as usize;
        let hidden_count = u32s(&mut at)? as usize;
        let mut hidden_dims = Vec::with_capacity(hidden_count);
        for _ in 0..hidden_count {
            hidden_dims.push(u32s(&mut at)? as usize);
        }
        let feature_cfg =
            FeatureEncoderConfig { input_dim, hidden_dims, embed_dim, fusion, views };

        let tensor_count = u32s(&mut at)? as usize;
        let mut tensors = Vec::with_capacity(tensor_count);
        for i in 0..tensor_count {
            let rank = u32s(&mut at)? as usize;
            if rank != 2 {
                return Err(bad(format!("tensor {i} has rank {rank}, expected 2")));
            }
            let rows = u32s(&mut at)? as usize;
            let cols = u32s(&mut at)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let v = read_f32(&bytes, &mut at)
                    .ok_or_else(|| bad(format!("tensor {i} truncated at byte {at}")))?;
                data.push(S::from_f64(v as f64));
            }
            tensors.push(Tensor::from_vec(rows, cols, data));
        }
        if at != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - at)));
        }

        // Rebuild the nested structure by drawing from the flat list in
        // canonical order, validating shapes against the configs.
        let mut iter = tensors.into_iter();
        let mut next = |what: &str, rows: usize, cols: usize| -> EncResult<Tensor<S>> {
            let t = iter.next().ok_or_else(|| bad(format!("missing tensor {what}")))?;
            if t.rows() != rows || t.cols() != cols {
                return Err(bad(format!(
                    "{what}: expected {rows}x{cols}, found {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
            Ok(t)
        };
        let d = graph_cfg.embed_dim;
        if d == 0 || graph_cfg.heads == 0 || d % graph_cfg.heads != 0 {
            return Err(bad(format!("inconsistent dims d={d} heads={}", graph_cfg.heads)));
        }
        let head_dim = d / graph_cfg.heads;
        let node_proj = next("node_proj", graph_cfg.input_width(), d)?;
        let node_proj_b = next("node_proj_b", 1, d)?;
        let mut layers = Vec::with_capacity(graph_cfg.layers);
        for _ in 0..graph_cfg.layers {
            let mut wq = Vec::new();
            let mut bq = Vec::new();
            let mut wk = Vec::new();
            let mut bk = Vec::new();
            let mut wv = Vec::new();
            let mut bv = Vec::new();
            for _ in 0..graph_cfg.heads {
                wq.push(next("wq", d, head_dim)?);
                bq.push(next("bq", 1, head_dim)?);
                wk.push(next("wk", d, head_dim)?);
                bk.push(next("bk", 1, head_dim)?);
                wv.push(next("wv", d, head_dim)?);
                bv.push(next("bv", 1, head_dim)?);
            }
            layers.push(LayerParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo: next("wo", d, d)?,
                bo: next("bo", 1, d)?,
                ln1_gamma: next("ln1_gamma", 1, d)?,
                ln1_beta: next("ln1_beta", 1, d)?,
                ff1: next("ff1", d, 2 * d)?,
                ff1_b: next("ff1_b", 1, 2 * d)?,
                ff2: next("ff2", 2 * d, d)?,
                ff2_b: next("ff2_b", 1, d)?,
                ln2_gamma: next("ln2_gamma", 1, d)?,
                ln2_beta: next("ln2_beta", 1, d)?,
            });
        }
        let mut feature_layers = Vec::new();
        for (fan_in, fan_out) in feature_cfg.layer_dims() {
            let w = next("feature w", fan_in, fan_out)?;
            let b = next("feature b", 1, fan_out)?;
            feature_layers.push((w, b));
        }
        if iter.next().is_some() {
            return Err(bad("extra tensors beyond the declared layout".into()));
        }
        let params =
            ModelParams { graph_cfg, feature_cfg, node_proj, node_proj_b, layers, feature_layers };
        params.graph_cfg.check()?;
        params.feature_cfg.check()?;
        Ok(params)
    }
}
