//! Operation tape: forward evaluation with recorded reverse passes.

use super::{Tensor, TensorError};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Handle to a tensor slot on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

enum Node<E: Scalar> {
    MatMul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    Transpose {
        a: TensorId,
        out: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    AddBias {
        x: TensorId,
        bias: TensorId,
        out: TensorId,
    },
    Scale {
        a: TensorId,
        c: E,
        out: TensorId,
    },
    Gelu {
        a: TensorId,
        out: TensorId,
    },
    Softmax {
        a: TensorId,
        axis: usize,
        out: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<E>,
        rstd: Vec<E>,
        out: TensorId,
    },
    GatherRows {
        table: TensorId,
        ids: Vec<usize>,
        out: TensorId,
    },
    MaskedCrossEntropy {
        logits: TensorId,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<E>,
        valid: usize,
        out: TensorId,
    },
    MaskFill {
        a: TensorId,
        mask: Vec<bool>,
        out: TensorId,
    },
    Dropout {
        a: TensorId,
        keep: Vec<E>,
        out: TensorId,
    },
    Sum {
        a: TensorId,
        out: TensorId,
    },
    SliceCols {
        a: TensorId,
        start: usize,
        end: usize,
        out: TensorId,
    },
    ConcatCols {
        parts: Vec<TensorId>,
        out: TensorId,
    },
    SliceRows {
        a: TensorId,
        start: usize,
        end: usize,
        out: TensorId,
    },
    ConcatRows {
        parts: Vec<TensorId>,
        out: TensorId,
    },
}

impl<E: Scalar> Node<E> {
    fn out_id(&self) -> TensorId {
        match self {
            Node::MatMul { out, .. }
            | Node::Transpose { out, .. }
            | Node::Add { out, .. }
            | Node::AddBias { out, .. }
            | Node::Scale { out, .. }
            | Node::Gelu { out, .. }
            | Node::Softmax { out, .. }
            | Node::LayerNorm { out, .. }
            | Node::GatherRows { out, .. }
            | Node::MaskedCrossEntropy { out, .. }
            | Node::MaskFill { out, .. }
            | Node::Dropout { out, .. }
            | Node::Sum { out, .. }
            | Node::SliceCols { out, .. }
            | Node::ConcatCols { out, .. }
            | Node::SliceRows { out, .. }
            | Node::ConcatRows { out, .. } => *out,
        }
    }
}

/// Records every differentiable operation of one forward pass.
///
/// Node inputs always precede the node itself, so a single reverse sweep
/// propagates adjoints. Saved activations are immutable once written;
/// repeating `backward` after clearing gradients reproduces them exactly.
pub struct Tape<E: Scalar> {
    slots: Vec<Tensor<E>>,
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    let mut acc = E::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<E: Scalar>(alpha: E, x: &[E], y: &mut [E]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            slots: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn num_tensors(&self) -> usize {
        self.slots.len()
    }

    pub fn value(&self, id: TensorId) -> &Tensor<E> {
        &self.slots[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[E] {
        self.slots[id.0].data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.slots[id.0].shape()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.slots[id.0].grad()
    }

    /// Scalar convenience accessor; the slot must hold exactly one element.
    pub fn scalar_value(&self, id: TensorId) -> Result<E, TensorError> {
        let t = &self.slots[id.0];
        if t.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: t.shape().to_vec(),
            });
        }
        Ok(t.data()[0])
    }

    /// Clears every gradient buffer, keeping values and nodes intact.
    pub fn clear_grads(&mut self) {
        for slot in &mut self.slots {
            slot.clear_grad();
        }
    }

    /// Drops every tensor (and node) at or past the watermark. Used by
    /// evaluation loops to reuse one tape across many forward passes
    /// without growing memory; later ops must not reference dropped ids.
    pub fn truncate_to(&mut self, watermark: usize) {
        self.slots.truncate(watermark);
        self.nodes.retain(|n| n.out_id().0 < watermark);
    }

    pub fn leaf(&mut self, t: Tensor<E>) -> TensorId {
        self.slots.push(t);
        TensorId(self.slots.len() - 1)
    }

    pub fn leaf_from(
        &mut self,
        data: Vec<E>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<TensorId, TensorError> {
        let mut t = Tensor::new(data, shape)?;
        t.set_requires_grad(requires_grad);
        Ok(self.leaf(t))
    }

    fn push(&mut self, data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        let mut t = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        t.set_requires_grad(requires_grad);
        self.slots.push(t);
        TensorId(self.slots.len() - 1)
    }

    fn wants(&self, id: TensorId) -> bool {
        self.slots[id.0].requires_grad()
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// 2-D matrix product `a[m×k] × b[k×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.slots[a.0], &self.slots[b.0]);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k) = ta.dims2();
        let n = tb.shape()[1];
        let mut out = vec![E::zero(); m * n];
        let ad = ta.data();
        let bd = tb.data();
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                axpy(av, &bd[p * n..(p + 1) * n], orow);
            }
        }
        let rg = self.wants(a) || self.wants(b);
        let id = self.push(out, vec![m, n], rg);
        if rg {
            self.nodes.push(Node::MatMul { a, b, out: id });
        }
        Ok(id)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let ta = &self.slots[a.0];
        if ta.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = ta.dims2();
        let ad = ta.data();
        let mut out = vec![E::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let rg = self.wants(a);
        let id = self.push(out, vec![n, m], rg);
        if rg {
            self.nodes.push(Node::Transpose { a, out: id });
        }
        Ok(id)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ta, tb) = (&self.slots[a.0], &self.slots[b.0]);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<E> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.wants(a) || self.wants(b);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::Add { a, b, out: id });
        }
        Ok(id)
    }

    /// Adds a rank-1 bias over the last axis.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let (tx, tb) = (&self.slots[x.0], &self.slots[bias.0]);
        let d = *tx.shape().last().unwrap_or(&0);
        if tb.shape().len() != 1 || tb.shape()[0] != d || tx.shape().is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let bd = tb.data();
        let out: Vec<E> = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % d])
            .collect();
        let shape = tx.shape().to_vec();
        let rg = self.wants(x) || self.wants(bias);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::AddBias { x, bias, out: id });
        }
        Ok(id)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: TensorId, c: E) -> TensorId {
        let ta = &self.slots[a.0];
        let out: Vec<E> = ta.data().iter().map(|&v| v * c).collect();
        let shape = ta.shape().to_vec();
        let rg = self.wants(a);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::Scale { a, c, out: id });
        }
        id
    }

    /// Exact-erf GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let ta = &self.slots[a.0];
        let half = E::from_f64(0.5);
        let inv_sqrt2 = E::from_f64(INV_SQRT_2);
        let out: Vec<E> = ta
            .data()
            .iter()
            .map(|&x| x * half * (E::one() + (x * inv_sqrt2).erf()))
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.wants(a);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::Gelu { a, out: id });
        }
        id
    }

    /// Max-subtracted softmax along `axis`. Lanes whose maximum is not
    /// finite (e.g. fully `-inf` after masking) are rejected.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        let ta = &self.slots[a.0];
        let rank = ta.shape().len();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let shape = ta.shape().to_vec();
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let ad = ta.data();
        let mut out = vec![E::zero(); ad.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut mx = E::neg_infinity();
                for t in 0..lane {
                    let v = ad[base + t * inner];
                    if v > mx {
                        mx = v;
                    }
                }
                if !mx.is_finite() {
                    return Err(TensorError::NonFinite {
                        what: format!("softmax lane {} (max {mx})", o * inner + i),
                    });
                }
                let mut sum = E::zero();
                for t in 0..lane {
                    let e = (ad[base + t * inner] - mx).exp();
                    out[base + t * inner] = e;
                    sum += e;
                }
                for t in 0..lane {
                    out[base + t * inner] /= sum;
                }
            }
        }
        let rg = self.wants(a);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::Softmax { a, axis, out: id });
        }
        Ok(id)
    }

    /// Per-row normalization over the last axis, then scale and shift.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: E,
    ) -> Result<TensorId, TensorError> {
        let (tx, tg, tb) = (&self.slots[x.0], &self.slots[gamma.0], &self.slots[beta.0]);
        let d = *tx.shape().last().unwrap_or(&0);
        if d == 0
            || tg.shape() != [d]
            || tb.shape() != [d]
        {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let rows = tx.numel() / d;
        let xd = tx.data();
        let gd = tg.data();
        let bd = tb.data();
        let mut out = vec![E::zero(); tx.numel()];
        let mut means = vec![E::zero(); rows];
        let mut rstds = vec![E::zero(); rows];
        let inv_d = E::one() / E::from_f64(d as f64);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mean = E::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = E::zero();
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let rstd = E::one() / (var + eps).sqrt();
            means[r] = mean;
            rstds[r] = rstd;
            let orow = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                orow[j] = (row[j] - mean) * rstd * gd[j] + bd[j];
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.wants(x) || self.wants(gamma) || self.wants(beta);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
                out: id,
            });
        }
        Ok(id)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`. Gradients scatter-add
    /// back into the table.
    pub fn gather_rows(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId, TensorError> {
        let tt = &self.slots[table.0];
        if tt.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: tt.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (v, d) = tt.dims2();
        for &i in ids {
            if i >= v {
                return Err(TensorError::IndexOutOfRange { index: i, bound: v });
            }
        }
        let td = tt.data();
        let mut out = vec![E::zero(); ids.len() * d];
        for (r, &i) in ids.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.wants(table);
        let id = self.push(out, vec![ids.len(), d], rg);
        if rg {
            self.nodes.push(Node::GatherRows {
                table,
                ids: ids.to_vec(),
                out: id,
            });
        }
        Ok(id)
    }

    /// Mean negative log-softmax over the positions whose target differs
    /// from `ignore`. Rejects the degenerate all-ignored case outright.
    pub fn masked_cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        ignore: usize,
    ) -> Result<TensorId, TensorError> {
        let tl = &self.slots[logits.0];
        if tl.shape().len() != 2 || tl.shape()[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (n, c) = tl.dims2();
        let ld = tl.data();
        let mut probs = vec![E::zero(); n * c];
        let mut valid = 0usize;
        let mut loss = E::zero();
        for i in 0..n {
            let t = targets[i];
            if t == ignore {
                continue;
            }
            if t >= c {
                return Err(TensorError::IndexOutOfRange { index: t, bound: c });
            }
            valid += 1;
            let row = &ld[i * c..(i + 1) * c];
            let mut mx = E::neg_infinity();
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            if !mx.is_finite() {
                return Err(TensorError::NonFinite {
                    what: format!("cross-entropy logits row {i}"),
                });
            }
            let mut sum = E::zero();
            let prow = &mut probs[i * c..(i + 1) * c];
            for j in 0..c {
                let e = (row[j] - mx).exp();
                prow[j] = e;
                sum += e;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            loss += sum.ln() + mx - row[t];
        }
        if valid == 0 {
            return Err(TensorError::NoValidTarget);
        }
        loss /= E::from_f64(valid as f64);
        let rg = self.wants(logits);
        let id = self.push(vec![loss], vec![1], rg);
        if rg {
            self.nodes.push(Node::MaskedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                valid,
                out: id,
            });
        }
        Ok(id)
    }

    /// Keeps entries where `mask` is true, replaces the rest with `-inf`.
    /// The mask is a constant: no gradient flows through blocked entries.
    pub fn mask_fill_neg_inf(
        &mut self,
        a: TensorId,
        mask: &[bool],
    ) -> Result<TensorId, TensorError> {
        let ta = &self.slots[a.0];
        if mask.len() != ta.numel() {
            return Err(TensorError::LengthMismatch {
                expected: ta.numel(),
                got: mask.len(),
            });
        }
        let out: Vec<E> = ta
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &keep)| if keep { v } else { E::neg_infinity() })
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.wants(a);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::MaskFill {
                a,
                mask: mask.to_vec(),
                out: id,
            });
        }
        Ok(id)
    }

    /// Inverted-scaling dropout: each element is zeroed with probability `p`
    /// or scaled by `1/(1-p)`, drawn from the supplied generator.
    pub fn dropout(&mut self, a: TensorId, p: f64, rng: &mut SplitMix64) -> TensorId {
        debug_assert!((0.0..1.0).contains(&p));
        let ta = &self.slots[a.0];
        let inv_keep = E::from_f64(1.0 / (1.0 - p));
        let keep: Vec<E> = (0..ta.numel())
            .map(|_| {
                if rng.next_f64() < p {
                    E::zero()
                } else {
                    inv_keep
                }
            })
            .collect();
        let out: Vec<E> = ta.data().iter().zip(&keep).map(|(&v, &k)| v * k).collect();
        let shape = ta.shape().to_vec();
        let rg = self.wants(a);
        let id = self.push(out, shape, rg);
        if rg {
            self.nodes.push(Node::Dropout { a, keep, out: id });
        }
        id
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let ta = &self.slots[a.0];
        let mut s = E::zero();
        for &v in ta.data() {
            s += v;
        }
        let rg = self.wants(a);
        let id = self.push(vec![s], vec![1], rg);
        if rg {
            self.nodes.push(Node::Sum { a, out: id });
        }
        id
    }

    /// Column slice `[start, end)` of a 2-D tensor.
    pub fn slice_cols(
        &mut self,
        a: TensorId,
        start: usize,
        end: usize,
    ) -> Result<TensorId, TensorError> {
        let ta = &self.slots[a.0];
        if ta.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = ta.dims2();
        if start >= end || end > n {
            return Err(TensorError::BadRange {
                start,
                end,
                bound: n,
            });
        }
        let w = end - start;
        let ad = ta.data();
        let mut out = vec![E::zero(); m * w];
        for i in 0..m {
            out[i * w..(i + 1) * w].copy_from_slice(&ad[i * n + start..i * n + end]);
        }
        let rg = self.wants(a);
        let id = self.push(out, vec![m, w], rg);
        if rg {
            self.nodes.push(Node::SliceCols {
                a,
                start,
                end,
                out: id,
            });
        }
        Ok(id)
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadRange {
                start: 0,
                end: 0,
                bound: 0,
            });
        }
        let m = self.slots[parts[0].0].shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let tp = &self.slots[p.0];
            if tp.shape().len() != 2 || tp.shape()[0] != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.slots[parts[0].0].shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
            widths.push(tp.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![E::zero(); m * total];
        let mut off = 0usize;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pd = self.slots[p.0].data();
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.wants(p));
        let id = self.push(out, vec![m, total], rg);
        if rg {
            self.nodes.push(Node::ConcatCols {
                parts: parts.to_vec(),
                out: id,
            });
        }
        Ok(id)
    }

    /// Row slice `[start, end)` of a 2-D tensor.
    pub fn slice_rows(
        &mut self,
        a: TensorId,
        start: usize,
        end: usize,
    ) -> Result<TensorId, TensorError> {
        let ta = &self.slots[a.0];
        if ta.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = ta.dims2();
        if start >= end || end > m {
            return Err(TensorError::BadRange {
                start,
                end,
                bound: m,
            });
        }
        let out = ta.data()[start * n..end * n].to_vec();
        let rg = self.wants(a);
        let id = self.push(out, vec![end - start, n], rg);
        if rg {
            self.nodes.push(Node::SliceRows {
                a,
                start,
                end,
                out: id,
            });
        }
        Ok(id)
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadRange {
                start: 0,
                end: 0,
                bound: 0,
            });
        }
        let n = self.slots[parts[0].0].shape().get(1).copied().unwrap_or(0);
        let mut total_rows = 0usize;
        for &p in parts {
            let tp = &self.slots[p.0];
            if tp.shape().len() != 2 || tp.shape()[1] != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.slots[parts[0].0].shape().to_vec(),
                    rhs: tp.shape().to_vec(),
                });
            }
            total_rows += tp.shape()[0];
        }
        let mut out = Vec::with_capacity(total_rows * n);
        for &p in parts {
            out.extend_from_slice(self.slots[p.0].data());
        }
        let rg = parts.iter().any(|&p| self.wants(p));
        let id = self.push(out, vec![total_rows, n], rg);
        if rg {
            self.nodes.push(Node::ConcatRows {
                parts: parts.to_vec(),
                out: id,
            });
        }
        Ok(id)
    }

    // ── reverse pass ────────────────────────────────────────────────────

    /// Populates gradients for every tensor that requires them, starting
    /// from a scalar loss. Contributions accumulate additively; leaves off
    /// the path to the loss end with all-zero gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.slots[loss.0].numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.slots[loss.0].shape().to_vec(),
            });
        }
        self.add_to_grad(loss, 0, &[E::one()]);
        let nodes = std::mem::take(&mut self.nodes);
        for node in nodes.iter().rev() {
            self.backprop(node)?;
        }
        self.nodes = nodes;
        for slot in &mut self.slots {
            if slot.requires_grad() && slot.grad().is_none() {
                let n = slot.numel();
                slot.set_grad(vec![E::zero(); n]).expect("grad length");
            }
        }
        Ok(())
    }

    fn cloned_grad(&self, id: TensorId) -> Option<Vec<E>> {
        self.slots[id.0].grad().map(|g| g.to_vec())
    }

    fn add_to_grad(&mut self, id: TensorId, offset: usize, contrib: &[E]) {
        let slot = &mut self.slots[id.0];
        let n = slot.numel();
        if slot.grad().is_none() {
            slot.set_grad(vec![E::zero(); n]).expect("grad length");
        }
        let g = slot.grad.as_mut().expect("grad buffer");
        for (dst, &c) in g[offset..offset + contrib.len()].iter_mut().zip(contrib) {
            *dst += c;
        }
    }

    fn backprop(&mut self, node: &Node<E>) -> Result<(), TensorError> {
        match node {
            Node::MatMul { a, b, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let (m, k) = self.slots[a.0].dims2();
                let n = self.slots[b.0].shape()[1];
                if self.wants(*a) {
                    let bd = self.slots[b.0].data();
                    let mut da = vec![E::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (p, slot) in darow.iter_mut().enumerate() {
                            *slot = dot(grow, &bd[p * n..(p + 1) * n]);
                        }
                    }
                    self.add_to_grad(*a, 0, &da);
                }
                if self.wants(*b) {
                    let ad = self.slots[a.0].data();
                    let mut db = vec![E::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(ad[i * k + p], grow, &mut db[p * n..(p + 1) * n]);
                        }
                    }
                    self.add_to_grad(*b, 0, &db);
                }
            }
            Node::Transpose { a, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let (m, n) = self.slots[a.0].dims2();
                let mut da = vec![E::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                self.add_to_grad(*a, 0, &da);
            }
            Node::Add { a, b, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                if self.wants(*a) {
                    self.add_to_grad(*a, 0, &g);
                }
                if self.wants(*b) {
                    self.add_to_grad(*b, 0, &g);
                }
            }
            Node::AddBias { x, bias, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                if self.wants(*x) {
                    self.add_to_grad(*x, 0, &g);
                }
                if self.wants(*bias) {
                    let d = self.slots[bias.0].numel();
                    let mut db = vec![E::zero(); d];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % d] += gv;
                    }
                    self.add_to_grad(*bias, 0, &db);
                }
            }
            Node::Scale { a, c, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let da: Vec<E> = g.iter().map(|&gv| gv * *c).collect();
                self.add_to_grad(*a, 0, &da);
            }
            Node::Gelu { a, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let half = E::from_f64(0.5);
                let inv_sqrt2 = E::from_f64(INV_SQRT_2);
                let inv_sqrt2pi = E::from_f64(INV_SQRT_2PI);
                let ad = self.slots[a.0].data();
                let da: Vec<E> = ad
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gv)| {
                        let cdf = half * (E::one() + (x * inv_sqrt2).erf());
                        let pdf = inv_sqrt2pi * (-half * x * x).exp();
                        gv * (cdf + x * pdf)
                    })
                    .collect();
                self.add_to_grad(*a, 0, &da);
            }
            Node::Softmax { a, axis, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let shape = self.slots[out.0].shape().to_vec();
                let lane = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let p = self.slots[out.0].data();
                let mut da = vec![E::zero(); p.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * lane * inner + i;
                        let mut acc = E::zero();
                        for t in 0..lane {
                            let idx = base + t * inner;
                            acc += p[idx] * g[idx];
                        }
                        for t in 0..lane {
                            let idx = base + t * inner;
                            da[idx] = p[idx] * (g[idx] - acc);
                        }
                    }
                }
                self.add_to_grad(*a, 0, &da);
            }
            Node::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
                out,
            } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let d = self.slots[gamma.0].numel();
                let rows = self.slots[x.0].numel() / d;
                let xd = self.slots[x.0].data().to_vec();
                let gd = self.slots[gamma.0].data().to_vec();
                let inv_d = E::one() / E::from_f64(d as f64);
                if self.wants(*x) {
                    let mut dx = vec![E::zero(); xd.len()];
                    for r in 0..rows {
                        let (mu, rs) = (mean[r], rstd[r]);
                        let xrow = &xd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut sum_gg = E::zero();
                        let mut sum_ggx = E::zero();
                        for j in 0..d {
                            let gg = grow[j] * gd[j];
                            let xh = (xrow[j] - mu) * rs;
                            sum_gg += gg;
                            sum_ggx += gg * xh;
                        }
                        let mean_gg = sum_gg * inv_d;
                        let mean_ggx = sum_ggx * inv_d;
                        let dxrow = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            let gg = grow[j] * gd[j];
                            let xh = (xrow[j] - mu) * rs;
                            dxrow[j] = rs * (gg - mean_gg - xh * mean_ggx);
                        }
                    }
                    self.add_to_grad(*x, 0, &dx);
                }
                if self.wants(*gamma) {
                    let mut dgamma = vec![E::zero(); d];
                    for r in 0..rows {
                        let (mu, rs) = (mean[r], rstd[r]);
                        for j in 0..d {
                            let xh = (xd[r * d + j] - mu) * rs;
                            dgamma[j] += g[r * d + j] * xh;
                        }
                    }
                    self.add_to_grad(*gamma, 0, &dgamma);
                }
                if self.wants(*beta) {
                    let mut dbeta = vec![E::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dbeta[j] += g[r * d + j];
                        }
                    }
                    self.add_to_grad(*beta, 0, &dbeta);
                }
            }
            Node::GatherRows { table, ids, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let d = self.slots[table.0].shape()[1];
                for (r, &i) in ids.iter().enumerate() {
                    self.add_to_grad(*table, i * d, &g[r * d..(r + 1) * d]);
                }
            }
            Node::MaskedCrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                valid,
                out,
            } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let gv = g[0] / E::from_f64(*valid as f64);
                let (n, c) = self.slots[logits.0].dims2();
                let mut dl = vec![E::zero(); n * c];
                for i in 0..n {
                    let t = targets[i];
                    if t == *ignore {
                        continue;
                    }
                    let prow = &probs[i * c..(i + 1) * c];
                    let drow = &mut dl[i * c..(i + 1) * c];
                    for j in 0..c {
                        drow[j] = prow[j] * gv;
                    }
                    drow[t] -= gv;
                }
                self.add_to_grad(*logits, 0, &dl);
            }
            Node::MaskFill { a, mask, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let da: Vec<E> = g
                    .iter()
                    .zip(mask)
                    .map(|(&gv, &keep)| if keep { gv } else { E::zero() })
                    .collect();
                self.add_to_grad(*a, 0, &da);
            }
            Node::Dropout { a, keep, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let da: Vec<E> = g.iter().zip(keep).map(|(&gv, &k)| gv * k).collect();
                self.add_to_grad(*a, 0, &da);
            }
            Node::Sum { a, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let n = self.slots[a.0].numel();
                let da = vec![g[0]; n];
                self.add_to_grad(*a, 0, &da);
            }
            Node::SliceCols { a, start, end, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let (m, n) = self.slots[a.0].dims2();
                let w = end - start;
                let mut da = vec![E::zero(); m * n];
                for i in 0..m {
                    da[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.add_to_grad(*a, 0, &da);
            }
            Node::ConcatCols { parts, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let m = self.slots[out.0].shape()[0];
                let total = self.slots[out.0].shape()[1];
                let mut off = 0usize;
                for &p in parts {
                    let w = self.slots[p.0].shape()[1];
                    if self.wants(p) {
                        let mut dp = vec![E::zero(); m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        self.add_to_grad(p, 0, &dp);
                    }
                    off += w;
                }
            }
            Node::SliceRows { a, start, end, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let n = self.slots[a.0].shape()[1];
                let _ = end;
                self.add_to_grad(*a, start * n, &g);
            }
            Node::ConcatRows { parts, out } => {
                let Some(g) = self.cloned_grad(*out) else {
                    return Ok(());
                };
                let mut off = 0usize;
                for &p in parts {
                    let len = self.slots[p.0].numel();
                    if self.wants(p) {
                        self.add_to_grad(p, 0, &g[off..off + len]);
                    }
                    off += len;
                }
            }
        }
        Ok(())
    }
}
