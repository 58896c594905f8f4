//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations execute eagerly and are recorded on a tape when any input
//! requires gradients. `backward` replays the tape in exact reverse
//! execution order, accumulating vector-Jacobian products into every
//! reachable `requires_grad` leaf.
//!
//! Broadcasting rule: the only implicit broadcast is trailing-axis
//! alignment of a vector against the last axis (`add_row` / `mul_row`).
//! Everything else requires exact shape agreement.

use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NumericsError;

/// Handle to a node in one graph. Valid only for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

enum Op<T> {
    MatMul { a: TensorId, b: TensorId },
    MatMulNT { a: TensorId, b: TensorId },
    Bmm { a: TensorId, b: TensorId },
    BmmNT { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Neg { a: TensorId },
    Exp { a: TensorId },
    Abs { a: TensorId },
    Relu { a: TensorId },
    Scale { a: TensorId, c: T },
    Softmax { a: TensorId, axis: usize },
    LayerNorm { a: TensorId, eps: T },
    ConcatLast { inputs: Vec<TensorId> },
    Transpose01 { a: TensorId },
    Reshape { a: TensorId },
    SumAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
    L2NormLast { a: TensorId },
    AddRow { a: TensorId, v: TensorId },
    MulRow { a: TensorId, v: TensorId },
    RepeatRows { a: TensorId, k: usize },
    TileRows { a: TensorId, k: usize },
    NarrowRows { a: TensorId, start: usize, len: usize },
    SliceLast { a: TensorId, start: usize, len: usize },
}

struct Record<T> {
    op: Op<T>,
    out: TensorId,
}

/// Tape-backed computation graph at a single precision.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    records: Vec<Record<T>>,
    consumed: bool,
    debug_checks: bool,
    kink_gap: f64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            records: Vec::new(),
            consumed: false,
            debug_checks: false,
            kink_gap: f64::INFINITY,
        }
    }

    /// Enable per-op finite checks on all inputs (debug mode). Off by
    /// default since the scan costs as much as small elementwise ops.
    pub fn set_debug_checks(&mut self, on: bool) {
        self.debug_checks = on;
    }

    /// Smallest |x| ever fed to a kinked op (relu, abs) on this graph.
    /// Finite-difference checks resample inputs when this gap is smaller
    /// than the probe step can tolerate.
    pub fn kink_gap(&self) -> f64 {
        self.kink_gap
    }

    /// Register a constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> TensorId {
        self.push_node(value, false)
    }

    /// Register a learnable leaf (receives a gradient after backward).
    /// The graph snapshots the data; later mutation of the source does
    /// not affect this graph.
    pub fn param(&mut self, value: &Tensor<T>) -> TensorId {
        self.push_node(value.clone(), true)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last backward target w.r.t. this node, if any flowed.
    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn num_ops(&self) -> usize {
        self.records.len()
    }

    fn push_node(&mut self, value: Tensor<T>, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { value, requires_grad, grad: None });
        id
    }

    fn emit(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> TensorId {
        let out = self.push_node(value, needs_grad);
        if needs_grad {
            self.records.push(Record { op, out });
        }
        out
    }

    fn guard(&self, op: &'static str, inputs: &[TensorId]) -> Result<(), NumericsError> {
        if self.consumed {
            return Err(NumericsError::GraphConsumed);
        }
        if self.debug_checks {
            for &id in inputs {
                if !self.nodes[id.0].value.is_all_finite() {
                    return Err(NumericsError::NonFinite { op });
                }
            }
        }
        Ok(())
    }

    fn any_grad(&self, inputs: &[TensorId]) -> bool {
        inputs.iter().any(|&id| self.nodes[id.0].requires_grad)
    }

    fn mismatch(op: &'static str, details: String) -> NumericsError {
        NumericsError::ShapeMismatch { op, details }
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("matmul", &[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        mm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.any_grad(&[a, b]);
        Ok(self.emit(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, needs))
    }

    /// `[M,K] x [N,K] -> [M,N]` (right operand transposed).
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("matmul_nt", &[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Self::mismatch("matmul_nt", format!("{sa:?} x {sb:?}^T")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::ZERO; m * n];
        mm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.any_grad(&[a, b]);
        Ok(self.emit(Tensor::new(vec![m, n], out)?, Op::MatMulNT { a, b }, needs))
    }

    /// Batched `[B,M,K] x [B,K,N] -> [B,M,N]`.
    pub fn bmm(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("bmm", &[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Self::mismatch("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::ZERO; bs * m * n];
        for i in 0..bs {
            mm(
                &self.value(a).data()[i * m * k..(i + 1) * m * k],
                &self.value(b).data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let needs = self.any_grad(&[a, b]);
        Ok(self.emit(Tensor::new(vec![bs, m, n], out)?, Op::Bmm { a, b }, needs))
    }

    /// Batched `[B,M,K] x [B,N,K] -> [B,M,N]` (right operand transposed).
    pub fn bmm_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("bmm_nt", &[a, b])?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Self::mismatch("bmm_nt", format!("{sa:?} x {sb:?}^T")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let mut out = vec![T::ZERO; bs * m * n];
        for i in 0..bs {
            mm_nt(
                &self.value(a).data()[i * m * k..(i + 1) * m * k],
                &self.value(b).data()[i * n * k..(i + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let needs = self.any_grad(&[a, b]);
        Ok(self.emit(Tensor::new(vec![bs, m, n], out)?, Op::BmmNT { a, b }, needs))
    }

    // ── Elementwise ──────────────────────────────────────────────────

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<TensorId, NumericsError> {
        self.guard(name, &[a, b])?;
        if self.shape(a) != self.shape(b) {
            return Err(Self::mismatch(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.any_grad(&[a, b]);
        Ok(self.emit(Tensor::new(shape, data)?, op, needs))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: TensorId,
        f: impl Fn(T) -> T,
        op: Op<T>,
    ) -> Result<TensorId, NumericsError> {
        self.guard(name, &[a])?;
        let data: Vec<T> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(shape, data)?, op, needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.unary("neg", a, |x| -x, Op::Neg { a })
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.unary("exp", a, |x| x.exp(), Op::Exp { a })
    }

    pub fn abs(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.note_kink_gap(a);
        self.unary("abs", a, |x| x.abs(), Op::Abs { a })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.note_kink_gap(a);
        self.unary("relu", a, |x| x.maximum(T::ZERO), Op::Relu { a })
    }

    fn note_kink_gap(&mut self, a: TensorId) {
        for v in self.nodes[a.0].value.data() {
            let m = v.to_f64().abs();
            if m < self.kink_gap {
                self.kink_gap = m;
            }
        }
    }

    pub fn scale(&mut self, a: TensorId, c: T) -> Result<TensorId, NumericsError> {
        self.unary("scale", a, |x| x * c, Op::Scale { a, c })
    }

    // ── Structured ───────────────────────────────────────────────────

    /// Numerically stable softmax along `axis` (max subtraction per lane).
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId, NumericsError> {
        self.guard("softmax", &[a])?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Self::mismatch("softmax", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::ZERO; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = x[base];
                for l in 1..len {
                    max = max.maximum(x[base + l * inner]);
                }
                let mut sum = T::ZERO;
                for l in 0..len {
                    let e = (x[base + l * inner] - max).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= sum;
                }
            }
        }
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(shape, out)?, Op::Softmax { a, axis }, needs))
    }

    /// Layer normalization over the last axis, pre-affine: zero mean, unit
    /// variance with `eps` added to the variance. Constant rows map to zero.
    pub fn layer_norm(&mut self, a: TensorId, eps: T) -> Result<TensorId, NumericsError> {
        self.guard("layer_norm", &[a])?;
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| {
            Self::mismatch("layer_norm", "rank-0 input".to_string())
        })?;
        let x = self.value(a).data();
        let rows = x.len() / d;
        let inv_d = T::ONE / T::from_f64(d as f64);
        let mut out = vec![T::ZERO; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let inv_std = T::ONE / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out[r * d + j] = (v - mean) * inv_std;
            }
        }
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(shape, out)?, Op::LayerNorm { a, eps }, needs))
    }

    /// Concatenate along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, inputs: &[TensorId]) -> Result<TensorId, NumericsError> {
        self.guard("concat_last", inputs)?;
        if inputs.is_empty() {
            return Err(Self::mismatch("concat_last", "no inputs".to_string()));
        }
        let lead = self.shape(inputs[0])[..self.shape(inputs[0]).len() - 1].to_vec();
        let mut total_last = 0;
        for &id in inputs {
            let s = self.shape(id);
            if s[..s.len() - 1] != lead[..] {
                return Err(Self::mismatch(
                    "concat_last",
                    format!("leading dims differ: {:?} vs {:?}", lead, &s[..s.len() - 1]),
                ));
            }
            total_last += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![T::ZERO; rows * total_last];
        let mut offset = 0;
        for &id in inputs {
            let s = self.shape(id);
            let w = s[s.len() - 1];
            let data = self.value(id).data();
            for r in 0..rows {
                out[r * total_last + offset..r * total_last + offset + w]
                    .copy_from_slice(&data[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total_last);
        let needs = self.any_grad(inputs);
        Ok(self.emit(
            Tensor::new(shape, out)?,
            Op::ConcatLast { inputs: inputs.to_vec() },
            needs,
        ))
    }

    /// Swap the leading pair of axes.
    pub fn transpose01(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("transpose01", &[a])?;
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(Self::mismatch("transpose01", format!("rank {} < 2", shape.len())));
        }
        let out = transpose01_data(self.value(a).data(), &shape);
        let mut new_shape = shape.clone();
        new_shape.swap(0, 1);
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, out)?, Op::Transpose01 { a }, needs))
    }

    /// Reinterpret the data under a new shape of equal element count.
    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId, NumericsError> {
        self.guard("reshape", &[a])?;
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Self::mismatch(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), shape),
            ));
        }
        let data = self.value(a).data().to_vec();
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(shape, data)?, Op::Reshape { a }, needs))
    }

    /// Sum-reduce one axis away.
    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId, NumericsError> {
        self.guard("sum_axis", &[a])?;
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Self::mismatch("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * len + l) * inner + i];
                }
            }
        }
        let mut new_shape: Vec<usize> =
            shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, out)?, Op::SumAxis { a, axis }, needs))
    }

    /// Sum of all elements, as a scalar-shaped tensor.
    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("sum_all", &[a])?;
        let mut s = T::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::scalar(s), Op::SumAll { a }, needs))
    }

    /// Mean of all elements, as a scalar-shaped tensor.
    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("mean_all", &[a])?;
        let n = self.value(a).numel();
        let mut s = T::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        let mean = s / T::from_f64(n as f64);
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::scalar(mean), Op::MeanAll { a }, needs))
    }

    /// Euclidean norm over the last axis: `[..., d] -> [...]`.
    pub fn l2_norm_last(&mut self, a: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("l2_norm_last", &[a])?;
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| {
            Self::mismatch("l2_norm_last", "rank-0 input".to_string())
        })?;
        let x = self.value(a).data();
        let rows = x.len() / d;
        let mut out = vec![T::ZERO; rows];
        for r in 0..rows {
            let mut s = T::ZERO;
            for &v in &x[r * d..(r + 1) * d] {
                s += v * v;
            }
            out[r] = s.sqrt();
        }
        let mut new_shape = shape[..shape.len() - 1].to_vec();
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, out)?, Op::L2NormLast { a }, needs))
    }

    // ── Broadcasting (trailing-axis alignment) ──────────────────────

    /// `[..., D] + [D]`, the vector broadcast over all leading positions.
    pub fn add_row(&mut self, a: TensorId, v: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("add_row", &[a, v])?;
        self.check_row_broadcast("add_row", a, v)?;
        let d = self.shape(v)[0];
        let x = self.value(a).data();
        let w = self.value(v).data();
        let data: Vec<T> = x.iter().enumerate().map(|(i, &val)| val + w[i % d]).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.any_grad(&[a, v]);
        Ok(self.emit(Tensor::new(shape, data)?, Op::AddRow { a, v }, needs))
    }

    /// `[..., D] * [D]` elementwise, the vector broadcast over leading positions.
    pub fn mul_row(&mut self, a: TensorId, v: TensorId) -> Result<TensorId, NumericsError> {
        self.guard("mul_row", &[a, v])?;
        self.check_row_broadcast("mul_row", a, v)?;
        let d = self.shape(v)[0];
        let x = self.value(a).data();
        let w = self.value(v).data();
        let data: Vec<T> = x.iter().enumerate().map(|(i, &val)| val * w[i % d]).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.any_grad(&[a, v]);
        Ok(self.emit(Tensor::new(shape, data)?, Op::MulRow { a, v }, needs))
    }

    fn check_row_broadcast(
        &self,
        op: &'static str,
        a: TensorId,
        v: TensorId,
    ) -> Result<(), NumericsError> {
        let sa = self.shape(a);
        let sv = self.shape(v);
        if sv.len() != 1 || sa.last() != Some(&sv[0]) {
            return Err(Self::mismatch(op, format!("{sa:?} with vector {sv:?}")));
        }
        Ok(())
    }

    // ── Row structure ────────────────────────────────────────────────

    /// Repeat each leading-axis row `k` times consecutively:
    /// `[R, ...] -> [R*k, ...]` with out-row `i*k + t` = in-row `i`.
    pub fn repeat_rows(&mut self, a: TensorId, k: usize) -> Result<TensorId, NumericsError> {
        self.guard("repeat_rows", &[a])?;
        let shape = self.shape(a).to_vec();
        if shape.is_empty() || k == 0 {
            return Err(Self::mismatch("repeat_rows", format!("{shape:?} by {k}")));
        }
        let rows = shape[0];
        let stride: usize = shape[1..].iter().product::<usize>().max(1);
        let x = self.value(a).data();
        let mut out = vec![T::ZERO; rows * k * stride];
        for r in 0..rows {
            for t in 0..k {
                out[(r * k + t) * stride..(r * k + t + 1) * stride]
                    .copy_from_slice(&x[r * stride..(r + 1) * stride]);
            }
        }
        let mut new_shape = shape;
        new_shape[0] *= k;
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, out)?, Op::RepeatRows { a, k }, needs))
    }

    /// Repeat the whole leading-axis block `k` times:
    /// `[R, ...] -> [k*R, ...]` with out-row `t*R + i` = in-row `i`.
    pub fn tile_rows(&mut self, a: TensorId, k: usize) -> Result<TensorId, NumericsError> {
        self.guard("tile_rows", &[a])?;
        let shape = self.shape(a).to_vec();
        if shape.is_empty() || k == 0 {
            return Err(Self::mismatch("tile_rows", format!("{shape:?} by {k}")));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(x.len() * k);
        for _ in 0..k {
            out.extend_from_slice(x);
        }
        let mut new_shape = shape;
        new_shape[0] *= k;
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, out)?, Op::TileRows { a, k }, needs))
    }

    /// Slice `len` rows of the leading axis starting at `start`.
    pub fn narrow_rows(
        &mut self,
        a: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, NumericsError> {
        self.guard("narrow_rows", &[a])?;
        let shape = self.shape(a).to_vec();
        if shape.is_empty() || start + len > shape[0] || len == 0 {
            return Err(Self::mismatch(
                "narrow_rows",
                format!("rows {start}..{} of {shape:?}", start + len),
            ));
        }
        let stride: usize = shape[1..].iter().product::<usize>().max(1);
        let data = self.value(a).data()[start * stride..(start + len) * stride].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, data)?, Op::NarrowRows { a, start, len }, needs))
    }

    /// Slice `len` entries of the last axis starting at `start`.
    pub fn slice_last(
        &mut self,
        a: TensorId,
        start: usize,
        len: usize,
    ) -> Result<TensorId, NumericsError> {
        self.guard("slice_last", &[a])?;
        let shape = self.shape(a).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if start + len > d || len == 0 {
            return Err(Self::mismatch(
                "slice_last",
                format!("cols {start}..{} of {shape:?}", start + len),
            ));
        }
        let x = self.value(a).data();
        let rows = x.len() / d;
        let mut out = vec![T::ZERO; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&x[r * d + start..r * d + start + len]);
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len;
        let needs = self.any_grad(&[a]);
        Ok(self.emit(Tensor::new(new_shape, out)?, Op::SliceLast { a, start, len }, needs))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Marks the graph consumed; no
    /// further ops or backward calls are accepted.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), NumericsError> {
        if self.consumed {
            return Err(NumericsError::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        if self.records.is_empty() {
            return Err(NumericsError::EmptyGraph);
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![T::ONE]);
        for idx in (0..self.records.len()).rev() {
            let out = self.records[idx].out;
            if self.nodes[out.0].grad.is_none() {
                continue;
            }
            self.backward_record(idx);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contribution: &[T]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        debug_assert_eq!(contribution.len(), self.nodes[id.0].value.numel());
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                for (gi, &c) in g.iter_mut().zip(contribution) {
                    *gi += c;
                }
            }
            None => self.nodes[id.0].grad = Some(contribution.to_vec()),
        }
    }

    fn take_out_grad(&self, out: TensorId) -> Vec<T> {
        self.nodes[out.0].grad.clone().expect("caller checked grad present")
    }

    fn backward_record(&mut self, idx: usize) {
        // Ops are plain-old-data apart from input id lists; clone the ids out
        // to release the borrow on self.
        let out = self.records[idx].out;
        let d_out = self.take_out_grad(out);
        match &self.records[idx].op {
            &Op::MatMul { a, b } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut d_a = vec![T::ZERO; m * k];
                mm_nt(&d_out, self.value(b).data(), &mut d_a, m, n, k);
                self.accumulate(a, &d_a);
                let mut d_b = vec![T::ZERO; k * n];
                mm_tn(self.value(a).data(), &d_out, &mut d_b, m, k, n);
                self.accumulate(b, &d_b);
            }
            &Op::MatMulNT { a, b } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                let mut d_a = vec![T::ZERO; m * k];
                mm(&d_out, self.value(b).data(), &mut d_a, m, n, k);
                self.accumulate(a, &d_a);
                let mut d_b = vec![T::ZERO; n * k];
                mm_tn(&d_out, self.value(a).data(), &mut d_b, m, n, k);
                self.accumulate(b, &d_b);
            }
            &Op::Bmm { a, b } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let mut d_a = vec![T::ZERO; bs * m * k];
                let mut d_b = vec![T::ZERO; bs * k * n];
                for i in 0..bs {
                    mm_nt(
                        &d_out[i * m * n..(i + 1) * m * n],
                        &self.value(b).data()[i * k * n..(i + 1) * k * n],
                        &mut d_a[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                    mm_tn(
                        &self.value(a).data()[i * m * k..(i + 1) * m * k],
                        &d_out[i * m * n..(i + 1) * m * n],
                        &mut d_b[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                self.accumulate(a, &d_a);
                self.accumulate(b, &d_b);
            }
            &Op::BmmNT { a, b } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
                let mut d_a = vec![T::ZERO; bs * m * k];
                let mut d_b = vec![T::ZERO; bs * n * k];
                for i in 0..bs {
                    mm(
                        &d_out[i * m * n..(i + 1) * m * n],
                        &self.value(b).data()[i * n * k..(i + 1) * n * k],
                        &mut d_a[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                    mm_tn(
                        &d_out[i * m * n..(i + 1) * m * n],
                        &self.value(a).data()[i * m * k..(i + 1) * m * k],
                        &mut d_b[i * n * k..(i + 1) * n * k],
                        m,
                        n,
                        k,
                    );
                }
                self.accumulate(a, &d_a);
                self.accumulate(b, &d_b);
            }
            &Op::Add { a, b } => {
                self.accumulate(a, &d_out);
                self.accumulate(b, &d_out);
            }
            &Op::Sub { a, b } => {
                self.accumulate(a, &d_out);
                let neg: Vec<T> = d_out.iter().map(|&g| -g).collect();
                self.accumulate(b, &neg);
            }
            &Op::Mul { a, b } => {
                let d_a: Vec<T> =
                    d_out.iter().zip(self.value(b).data()).map(|(&g, &y)| g * y).collect();
                let d_b: Vec<T> =
                    d_out.iter().zip(self.value(a).data()).map(|(&g, &x)| g * x).collect();
                self.accumulate(a, &d_a);
                self.accumulate(b, &d_b);
            }
            &Op::Neg { a } => {
                let d_a: Vec<T> = d_out.iter().map(|&g| -g).collect();
                self.accumulate(a, &d_a);
            }
            &Op::Exp { a } => {
                let d_a: Vec<T> =
                    d_out.iter().zip(self.value(out).data()).map(|(&g, &y)| g * y).collect();
                self.accumulate(a, &d_a);
            }
            &Op::Abs { a } => {
                // Subgradient 0 at the origin.
                let d_a: Vec<T> = d_out
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| {
                        if x > T::ZERO {
                            g
                        } else if x < T::ZERO {
                            -g
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                self.accumulate(a, &d_a);
            }
            &Op::Relu { a } => {
                let d_a: Vec<T> = d_out
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO })
                    .collect();
                self.accumulate(a, &d_a);
            }
            &Op::Scale { a, c } => {
                let d_a: Vec<T> = d_out.iter().map(|&g| g * c).collect();
                self.accumulate(a, &d_a);
            }
            &Op::Softmax { a, axis } => {
                let shape = self.shape(out).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let y = self.value(out).data();
                let mut d_a = vec![T::ZERO; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::ZERO;
                        for l in 0..len {
                            dot += d_out[base + l * inner] * y[base + l * inner];
                        }
                        for l in 0..len {
                            let p = base + l * inner;
                            d_a[p] = y[p] * (d_out[p] - dot);
                        }
                    }
                }
                self.accumulate(a, &d_a);
            }
            &Op::LayerNorm { a, eps } => {
                let shape = self.shape(a).to_vec();
                let d = *shape.last().unwrap();
                let x = self.value(a).data();
                let y = self.value(out).data();
                let rows = x.len() / d;
                let inv_d = T::ONE / T::from_f64(d as f64);
                let mut d_a = vec![T::ZERO; x.len()];
                for r in 0..rows {
                    let row = &x[r * d..(r + 1) * d];
                    let mut mean = T::ZERO;
                    for &v in row {
                        mean += v;
                    }
                    mean *= inv_d;
                    let mut var = T::ZERO;
                    for &v in row {
                        let c = v - mean;
                        var += c * c;
                    }
                    var *= inv_d;
                    let inv_std = T::ONE / (var + eps).sqrt();
                    let mut mean_dy = T::ZERO;
                    let mut mean_dy_y = T::ZERO;
                    for j in 0..d {
                        mean_dy += d_out[r * d + j];
                        mean_dy_y += d_out[r * d + j] * y[r * d + j];
                    }
                    mean_dy *= inv_d;
                    mean_dy_y *= inv_d;
                    for j in 0..d {
                        d_a[r * d + j] =
                            inv_std * (d_out[r * d + j] - mean_dy - y[r * d + j] * mean_dy_y);
                    }
                }
                self.accumulate(a, &d_a);
            }
            Op::ConcatLast { inputs } => {
                let inputs = inputs.clone();
                let total = *self.shape(out).last().unwrap();
                let rows = self.value(out).numel() / total;
                let mut offset = 0;
                for id in inputs {
                    let w = *self.shape(id).last().unwrap();
                    let mut d_in = vec![T::ZERO; rows * w];
                    for r in 0..rows {
                        d_in[r * w..(r + 1) * w]
                            .copy_from_slice(&d_out[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(id, &d_in);
                    offset += w;
                }
            }
            &Op::Transpose01 { a } => {
                let out_shape = self.shape(out).to_vec();
                let d_a = transpose01_data(&d_out, &out_shape);
                self.accumulate(a, &d_a);
            }
            &Op::Reshape { a } => {
                self.accumulate(a, &d_out);
            }
            &Op::SumAxis { a, axis } => {
                let shape = self.shape(a).to_vec();
                let (outer, len, inner) = axis_split(&shape, axis);
                let mut d_a = vec![T::ZERO; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            d_a[(o * len + l) * inner + i] = d_out[o * inner + i];
                        }
                    }
                }
                self.accumulate(a, &d_a);
            }
            &Op::SumAll { a } => {
                let n = self.value(a).numel();
                self.accumulate(a, &vec![d_out[0]; n]);
            }
            &Op::MeanAll { a } => {
                let n = self.value(a).numel();
                let g = d_out[0] / T::from_f64(n as f64);
                self.accumulate(a, &vec![g; n]);
            }
            &Op::L2NormLast { a } => {
                let shape = self.shape(a).to_vec();
                let d = *shape.last().unwrap();
                let x = self.value(a).data();
                let norms = self.value(out).data();
                let rows = x.len() / d;
                let mut d_a = vec![T::ZERO; x.len()];
                for r in 0..rows {
                    if norms[r] > T::ZERO {
                        let g = d_out[r] / norms[r];
                        for j in 0..d {
                            d_a[r * d + j] = g * x[r * d + j];
                        }
                    }
                }
                self.accumulate(a, &d_a);
            }
            &Op::AddRow { a, v } => {
                self.accumulate(a, &d_out);
                let d = self.value(v).numel();
                let mut d_v = vec![T::ZERO; d];
                for (i, &g) in d_out.iter().enumerate() {
                    d_v[i % d] += g;
                }
                self.accumulate(v, &d_v);
            }
            &Op::MulRow { a, v } => {
                let d = self.value(v).numel();
                let w = self.value(v).data().to_vec();
                let x = self.value(a).data();
                let d_a: Vec<T> =
                    d_out.iter().enumerate().map(|(i, &g)| g * w[i % d]).collect();
                let mut d_v = vec![T::ZERO; d];
                for (i, &g) in d_out.iter().enumerate() {
                    d_v[i % d] += g * x[i];
                }
                self.accumulate(a, &d_a);
                self.accumulate(v, &d_v);
            }
            &Op::RepeatRows { a, k } => {
                let shape = self.shape(a).to_vec();
                let rows = shape[0];
                let stride: usize = shape[1..].iter().product::<usize>().max(1);
                let mut d_a = vec![T::ZERO; rows * stride];
                for r in 0..rows {
                    for t in 0..k {
                        for s in 0..stride {
                            d_a[r * stride + s] += d_out[(r * k + t) * stride + s];
                        }
                    }
                }
                self.accumulate(a, &d_a);
            }
            &Op::TileRows { a, k } => {
                let n = self.value(a).numel();
                let mut d_a = vec![T::ZERO; n];
                for t in 0..k {
                    for s in 0..n {
                        d_a[s] += d_out[t * n + s];
                    }
                }
                self.accumulate(a, &d_a);
            }
            &Op::NarrowRows { a, start, len } => {
                let shape = self.shape(a).to_vec();
                let stride: usize = shape[1..].iter().product::<usize>().max(1);
                let mut d_a = vec![T::ZERO; shape[0] * stride];
                d_a[start * stride..(start + len) * stride].copy_from_slice(&d_out);
                self.accumulate(a, &d_a);
            }
            &Op::SliceLast { a, start, len } => {
                let shape = self.shape(a).to_vec();
                let d = *shape.last().unwrap();
                let rows = self.value(a).numel() / d;
                let mut d_a = vec![T::ZERO; rows * d];
                for r in 0..rows {
                    d_a[r * d + start..r * d + start + len]
                        .copy_from_slice(&d_out[r * len..(r + 1) * len]);
                }
                self.accumulate(a, &d_a);
            }
        }
    }
}

/// Split a shape around `axis` into (outer, axis length, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn transpose01_data<T: Scalar>(data: &[T], shape: &[usize]) -> Vec<T> {
    let (s0, s1) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product::<usize>().max(1);
    let mut out = vec![T::ZERO; data.len()];
    for i in 0..s0 {
        for j in 0..s1 {
            let src = (i * s1 + j) * inner;
            let dst = (j * s0 + i) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

/// out += a @ b, a: [m,k], b: [k,n].
fn mm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out += a @ b^T, a: [m,k], b: [n,k].
fn mm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = T::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            out[i * n + j] += s;
        }
    }
}

/// out += a^T @ b, a: [m,k], b: [m,n], out: [k,n].
fn mm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}
