//! Minimal reverse-mode differentiation engine.
//!
//! A [`Tape`] records a DAG of 2-D tensors. Every operation appends a
//! node holding the forward value and a backward closure that pushes
//! gradients into the node's parents; [`Tape::backward`] then walks
//! recorded nodes in reverse (parents always precede children, so
//! reverse insertion order is a reverse topological order) and visits
//! each contributing node exactly once.
//!
//! Only the primitives the encoders and losses need are implemented,
//! and the only broadcast is row-wise bias addition. Shape mismatches
//! are programming errors and panic; data-dependent conditions
//! (all-masked softmax rows, zero-norm rows, non-positive logs) are
//! recoverable [`AutodiffError`]s.

mod tensor;

pub use tensor::Tensor;

use thiserror::Error;

use crate::Scalar;

/// Additive constant inside layer-norm's variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("softmax row {row} has no admitted entries")]
    AllMaskedRow { row: usize },
    #[error("row {row} has zero norm, cannot normalize")]
    ZeroNormRow { row: usize },
    #[error("{op} requires positive entries, got {value} at index {index}")]
    NonPositive { op: &'static str, value: f64, index: usize },
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("loss must be a 1x1 tensor, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
}

pub type AdResult<T> = Result<T, AutodiffError>;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

type BackFn<S> = Box<dyn Fn(&[Tensor<S>], &Tensor<S>, &mut [Option<Tensor<S>>])>;

fn accum<S: Scalar>(slot: &mut Option<Tensor<S>>, delta: Tensor<S>) {
    match slot {
        Some(t) => t.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

/// Gradients of one backward pass, indexed by [`VarId`]. Vars the loss
/// does not depend on report zero.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<(usize, usize)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: VarId) -> Tensor<S> {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

/// Append-only record of a differentiable computation.
pub struct Tape<S: Scalar> {
    values: Vec<Tensor<S>>,
    backs: Vec<Option<BackFn<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { values: Vec::new(), backs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<S> {
        &self.values[id.0]
    }

    fn push(&mut self, value: Tensor<S>, back: Option<BackFn<S>>) -> VarId {
        self.values.push(value);
        self.backs.push(back);
        VarId(self.values.len() - 1)
    }

    /// Records an input tensor; gradients accumulate into it but do not
    /// propagate further.
    pub fn leaf(&mut self, value: Tensor<S>) -> VarId {
        self.push(value, None)
    }

    /// Runs reverse-mode accumulation from a scalar loss.
    pub fn backward(&self, loss: VarId) -> AdResult<Gradients<S>> {
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(AutodiffError::LossNotScalar { rows: lv.rows(), cols: lv.cols() });
        }
        let l = lv.as_slice()[0].to_f64();
        if !l.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(l));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![S::one()]));
        for id in (0..=loss.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            if let Some(back) = &self.backs[id] {
                let (parents, rest) = grads.split_at_mut(id);
                let grad_out = rest[0].as_ref().expect("checked non-none above");
                back(&self.values, grad_out, parents);
            }
        }
        let shapes = self.values.iter().map(|t| (t.rows(), t.cols())).collect();
        Ok(Gradients { grads, shapes })
    }

    // ── linear algebra ─────────────────────────────────────────────

    /// `a @ b`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul inner dims {}x{} @ {}x{}", av.rows(), av.cols(), bv.rows(), bv.cols());
        let out = tensor::mm_nn(av, bv);
        self.push(
            out,
            Some(Box::new(move |values, g, grads| {
                accum(&mut grads[a.0], tensor::mm_nt(g, &values[b.0]));
                accum(&mut grads[b.0], tensor::mm_tn(&values[a.0], g));
            })),
        )
    }

    /// `a @ transpose(b)`; the transposed variant of the matmul
    /// primitive (used for similarity matrices and attention scores).
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_nt inner dims {}x{} @ {}x{}^T", av.rows(), av.cols(), bv.rows(), bv.cols());
        let out = tensor::mm_nt(av, bv);
        self.push(
            out,
            Some(Box::new(move |values, g, grads| {
                accum(&mut grads[a.0], tensor::mm_nn(g, &values[b.0]));
                accum(&mut grads[b.0], tensor::mm_tn(g, &values[a.0]));
            })),
        )
    }

    /// Elementwise sum; `b` may also be a `1 x cols` row bias added to
    /// every row of `a` (the only supported broadcast).
    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "add cols {} vs {}", av.cols(), bv.cols());
        let broadcast = bv.rows() == 1 && av.rows() != 1;
        assert!(
            broadcast || av.rows() == bv.rows(),
            "add rows {} vs {}",
            av.rows(),
            bv.rows()
        );
        let mut out = av.clone();
        if broadcast {
            for r in 0..out.rows() {
                for c in 0..out.cols() {
                    let v = out.get(r, c) + bv.get(0, c);
                    out.set(r, c, v);
                }
            }
        } else {
            out.add_assign(bv);
        }
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                accum(&mut grads[a.0], g.clone());
                if broadcast {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let v = db.get(0, c) + g.get(r, c);
                            db.set(0, c, v);
                        }
                    }
                    accum(&mut grads[b.0], db);
                } else {
                    accum(&mut grads[b.0], g.clone());
                }
            })),
        )
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows(), av.cols()), (bv.rows(), bv.cols()), "mul shape mismatch");
        let out = av.zip_map(bv, |x, y| x * y);
        self.push(
            out,
            Some(Box::new(move |values, g, grads| {
                accum(&mut grads[a.0], g.zip_map(&values[b.0], |gv, y| gv * y));
                accum(&mut grads[b.0], g.zip_map(&values[a.0], |gv, x| gv * x));
            })),
        )
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: VarId, factor: S) -> VarId {
        let out = self.value(a).map(|x| x * factor);
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                accum(&mut grads[a.0], g.map(|x| x * factor));
            })),
        )
    }

    /// Horizontal concatenation of any number of parts with equal rows.
    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows(), rows, "concat_cols row mismatch");
                self.value(p).cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                for c in 0..pv.cols() {
                    out.set(r, at + c, pv.get(r, c));
                }
            }
            at += pv.cols();
        }
        let parts: Vec<VarId> = parts.to_vec();
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                let mut at = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let mut dp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        for c in 0..w {
                            dp.set(r, c, g.get(r, at + c));
                        }
                    }
                    accum(&mut grads[p.0], dp);
                    at += w;
                }
            })),
        )
    }

    /// Vertical concatenation of any number of parts with equal cols.
    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).cols(), cols, "concat_rows col mismatch");
                self.value(p).rows()
            })
            .collect();
        let total: usize = heights.iter().sum();
        let mut out = Tensor::zeros(total, cols);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            out.rows_mut(at, pv.rows()).copy_from_slice(pv.as_slice());
            at += pv.rows();
        }
        let parts: Vec<VarId> = parts.to_vec();
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                let mut at = 0;
                for (&p, &h) in parts.iter().zip(&heights) {
                    let mut dp = Tensor::zeros(h, g.cols());
                    dp.as_mut_slice().copy_from_slice(&g.as_slice()[at * g.cols()..(at + h) * g.cols()]);
                    accum(&mut grads[p.0], dp);
                    at += h;
                }
            })),
        )
    }

    /// Gathers the given rows (repeats allowed); backward scatter-adds.
    pub fn row_select(&mut self, a: VarId, rows: &[usize]) -> VarId {
        let av = self.value(a);
        let src_rows = av.rows();
        for &r in rows {
            assert!(r < src_rows, "row_select index {r} out of {src_rows}");
        }
        let mut out = Tensor::zeros(rows.len(), av.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.rows_mut(i, 1).copy_from_slice(av.row(r));
        }
        let rows: Vec<usize> = rows.to_vec();
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                let mut da = Tensor::zeros(src_rows, g.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..g.cols() {
                        let v = da.get(r, c) + g.get(i, c);
                        da.set(r, c, v);
                    }
                }
                accum(&mut grads[a.0], da);
            })),
        )
    }

    // ── elementwise nonlinearities ─────────────────────────────────

    pub fn exp(&mut self, a: VarId) -> VarId {
        let out = self.value(a).map(|x| x.exp());
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                accum(&mut grads[a.0], g.zip_map(&y, |gv, e| gv * e));
            })),
        )
    }

    pub fn log(&mut self, a: VarId) -> AdResult<VarId> {
        let av = self.value(a);
        for (i, &x) in av.as_slice().iter().enumerate() {
            if !(x > S::zero()) {
                return Err(AutodiffError::NonPositive { op: "log", value: x.to_f64(), index: i });
            }
        }
        let out = av.map(|x| x.ln());
        Ok(self.push(
            out,
            Some(Box::new(move |values, g, grads| {
                accum(&mut grads[a.0], g.zip_map(&values[a.0], |gv, x| gv / x));
            })),
        ))
    }

    pub fn sqrt(&mut self, a: VarId) -> AdResult<VarId> {
        let av = self.value(a);
        for (i, &x) in av.as_slice().iter().enumerate() {
            if x < S::zero() {
                return Err(AutodiffError::NonPositive { op: "sqrt", value: x.to_f64(), index: i });
            }
        }
        let out = av.map(|x| x.sqrt());
        Ok(self.push(
            out,
            Some(Box::new(move |values, g, grads| {
                let half = S::from_f64(0.5);
                accum(
                    &mut grads[a.0],
                    g.zip_map(&values[a.0], |gv, x| gv * half / x.sqrt()),
                );
            })),
        ))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let out = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(
            out,
            Some(Box::new(move |values, g, grads| {
                accum(
                    &mut grads[a.0],
                    g.zip_map(&values[a.0], |gv, x| if x > S::zero() { gv } else { S::zero() }),
                );
            })),
        )
    }

    // ── reductions and row-wise transforms ─────────────────────────

    /// Mean over all rows, producing `1 x cols`.
    pub fn mean_pool_rows(&mut self, a: VarId) -> VarId {
        let rows = self.value(a).rows();
        self.mean_pool_row_groups(a, &[(0, rows)])
    }

    /// Mean over each `(start, len)` row group, producing
    /// `groups x cols`; the grouped form of the mean-pool primitive used
    /// to pool a batch of stacked graphs in one op.
    pub fn mean_pool_row_groups(&mut self, a: VarId, groups: &[(usize, usize)]) -> VarId {
        let av = self.value(a);
        let cols = av.cols();
        for &(start, len) in groups {
            assert!(len > 0, "mean pool over empty row group");
            assert!(start + len <= av.rows(), "row group out of bounds");
        }
        let mut out = Tensor::zeros(groups.len(), cols);
        for (gi, &(start, len)) in groups.iter().enumerate() {
            let inv = S::from_f64(1.0 / len as f64);
            for r in start..start + len {
                for c in 0..cols {
                    let v = out.get(gi, c) + av.get(r, c) * inv;
                    out.set(gi, c, v);
                }
            }
        }
        let groups: Vec<(usize, usize)> = groups.to_vec();
        let src_rows = av.rows();
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                let mut da = Tensor::zeros(src_rows, g.cols());
                for (gi, &(start, len)) in groups.iter().enumerate() {
                    let inv = S::from_f64(1.0 / len as f64);
                    for r in start..start + len {
                        for c in 0..g.cols() {
                            let v = da.get(r, c) + g.get(gi, c) * inv;
                            da.set(r, c, v);
                        }
                    }
                }
                accum(&mut grads[a.0], da);
            })),
        )
    }

    /// Row-wise softmax over the entries admitted by `mask` (row-major,
    /// `true` = admitted); masked entries are exactly zero in the output
    /// and receive zero gradient. Every row needs >= 1 admitted entry.
    pub fn masked_softmax_rows(&mut self, a: VarId, mask: &[bool]) -> AdResult<VarId> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert_eq!(mask.len(), rows * cols, "mask size mismatch");
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row_mask = &mask[r * cols..(r + 1) * cols];
            let mut max = S::neg_infinity();
            for c in 0..cols {
                if row_mask[c] {
                    max = max.max(av.get(r, c));
                }
            }
            if max == S::neg_infinity() {
                return Err(AutodiffError::AllMaskedRow { row: r });
            }
            let mut denom = S::zero();
            for c in 0..cols {
                if row_mask[c] {
                    let e = (av.get(r, c) - max).exp();
                    out.set(r, c, e);
                    denom = denom + e;
                }
            }
            for c in 0..cols {
                if row_mask[c] {
                    out.set(r, c, out.get(r, c) / denom);
                }
            }
        }
        let mask: Vec<bool> = mask.to_vec();
        let out_clone = out.clone();
        Ok(self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                // dL/dx_j = y_j (g_j - sum_i g_i y_i), per row over the
                // admitted entries.
                let y = &out_clone;
                let mut da = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let row_mask = &mask[r * g.cols()..(r + 1) * g.cols()];
                    let mut dot = S::zero();
                    for c in 0..g.cols() {
                        if row_mask[c] {
                            dot = dot + g.get(r, c) * y.get(r, c);
                        }
                    }
                    for c in 0..g.cols() {
                        if row_mask[c] {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                }
                accum(&mut grads[a.0], da);
            })),
        ))
    }

    /// Row-wise layer normalization with learnable scale and shift
    /// (`gamma`, `beta` are `1 x cols` and receive gradients).
    pub fn layer_norm_rows(&mut self, a: VarId, gamma: VarId, beta: VarId) -> VarId {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert_eq!(self.value(gamma).cols(), cols, "layer norm gamma width");
        assert_eq!(self.value(gamma).rows(), 1, "layer norm gamma is a row");
        assert_eq!(self.value(beta).cols(), cols, "layer norm beta width");
        assert_eq!(self.value(beta).rows(), 1, "layer norm beta is a row");
        let eps = S::from_f64(LAYER_NORM_EPS);
        let inv_n = S::from_f64(1.0 / cols as f64);

        // Normalized activations and inverse std-devs are needed by the
        // backward pass; precompute once.
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let mut mean = S::zero();
            for c in 0..cols {
                mean = mean + av.get(r, c);
            }
            mean = mean * inv_n;
            let mut var = S::zero();
            for c in 0..cols {
                let d = av.get(r, c) - mean;
                var = var + d * d;
            }
            var = var * inv_n;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..cols {
                xhat.set(r, c, (av.get(r, c) - mean) * istd);
            }
        }
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, xhat.get(r, c) * gv.get(0, c) + bv.get(0, c));
            }
        }
        self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                let (rows, cols) = (g.rows(), g.cols());
                let mut da = Tensor::zeros(rows, cols);
                let mut dgamma = Tensor::zeros(1, cols);
                let mut dbeta = Tensor::zeros(1, cols);
                for r in 0..rows {
                    // dL/dxhat = g * gamma; then the standard two-moment
                    // correction maps it back to dL/dx.
                    let mut mean_dxhat = S::zero();
                    let mut mean_dxhat_xhat = S::zero();
                    for c in 0..cols {
                        let dxh = g.get(r, c) * gv.get(0, c);
                        mean_dxhat = mean_dxhat + dxh;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat.get(r, c);
                    }
                    mean_dxhat = mean_dxhat * inv_n;
                    mean_dxhat_xhat = mean_dxhat_xhat * inv_n;
                    for c in 0..cols {
                        let dxh = g.get(r, c) * gv.get(0, c);
                        let v = (dxh - mean_dxhat - xhat.get(r, c) * mean_dxhat_xhat) * inv_std[r];
                        da.set(r, c, v);
                        let dg = dgamma.get(0, c) + g.get(r, c) * xhat.get(r, c);
                        dgamma.set(0, c, dg);
                        let db = dbeta.get(0, c) + g.get(r, c);
                        dbeta.set(0, c, db);
                    }
                }
                accum(&mut grads[a.0], da);
                accum(&mut grads[gamma.0], dgamma);
                accum(&mut grads[beta.0], dbeta);
            })),
        )
    }

    /// Scales each row to unit Euclidean norm; zero rows are a domain
    /// error.
    pub fn l2_normalize_rows(&mut self, a: VarId) -> AdResult<VarId> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut norms = vec![S::zero(); rows];
        for (r, norm) in norms.iter_mut().enumerate() {
            let mut sq = S::zero();
            for c in 0..cols {
                let x = av.get(r, c);
                sq = sq + x * x;
            }
            *norm = sq.sqrt();
            if !(*norm > S::zero()) {
                return Err(AutodiffError::ZeroNormRow { row: r });
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, av.get(r, c) / norms[r]);
            }
        }
        let y = out.clone();
        Ok(self.push(
            out,
            Some(Box::new(move |_values, g, grads| {
                // dL/dx = (g - y <g, y>) / ||x|| per row.
                let mut da = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let mut dot = S::zero();
                    for c in 0..g.cols() {
                        dot = dot + g.get(r, c) * y.get(r, c);
                    }
                    for c in 0..g.cols() {
                        da.set(r, c, (g.get(r, c) - y.get(r, c) * dot) / norms[r]);
                    }
                }
                accum(&mut grads[a.0], da);
            })),
        ))
    }
}

// ── gradient checking ──────────────────────────────────────────────

/// Compares reverse-mode gradients of `build(tape, input_vars)` (which
/// must return a `1x1` loss) against central finite differences over
/// every component of every input, returning the worst relative error
/// with denominator `max(|analytic|, |numeric|, 1e-8, |loss| * 1e-6)`.
///
/// The `|loss| * 1e-6` term keeps the check meaningful on components
/// whose true derivative is (near) zero: a central difference of a loss
/// of magnitude `f` carries rounding noise of order `f * eps / (2h)`,
/// which is measurement noise, not gradient error.
pub fn gradient_check<S, F>(build: F, inputs: &[Tensor<S>], step: f64) -> AdResult<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[VarId]) -> AdResult<VarId>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::BadStep(step));
    }
    let eval = |tensors: &[Tensor<S>]| -> AdResult<f64> {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let lv = tape.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(AutodiffError::LossNotScalar { rows: lv.rows(), cols: lv.cols() });
        }
        let l = lv.as_slice()[0].to_f64();
        if !l.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(l));
        }
        Ok(l)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let loss_scale = tape.value(loss).as_slice()[0].to_f64().abs();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<S>> = vars.iter().map(|&v| grads.get(v)).collect();

    let floor = (loss_scale * 1e-6).max(1e-8);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for i in 0..input.as_slice().len() {
            let x = input.as_slice()[i].to_f64();
            work[ti].as_mut_slice()[i] = S::from_f64(x + step);
            let plus = eval(&work)?;
            work[ti].as_mut_slice()[i] = S::from_f64(x - step);
            let minus = eval(&work)?;
            work[ti].as_mut_slice()[i] = input.as_slice()[i];
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti].as_slice()[i].to_f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
