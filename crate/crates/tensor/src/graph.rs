//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every operation appends a node whose inputs were created earlier, so the
//! node order is already a topological order. [`Graph::backward`] walks it
//! in reverse and accumulates vector-Jacobian products into the inputs.
//! Gradients of nodes that feed several consumers are summed.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, Layout, Scalar};
use crate::tensor::{dims2, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Counters for degenerate inputs that were handled instead of producing
/// NaN or infinities.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Diagnostics {
    /// Rows with zero L2 norm that were normalized to the zero vector.
    pub zero_norm_rows: usize,
    /// Log inputs raised to the clamp floor.
    pub clamped_logs: usize,
}

pub(crate) enum Op<T> {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    LogClamped {
        x: Var,
        floor: T,
    },
    RowNorm(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Reshape(Var),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    InterleaveRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    AddPositional {
        x: Var,
        table: Var,
        block: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        heads: usize,
        probs: Vec<T>,
        keep: Option<Vec<T>>,
    },
    SegmentMean {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// A single-threaded computation graph.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, Var>,
    diagnostics: Diagnostics,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Input that gradients flow into.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Brings a stored parameter onto the tape. Repeated calls with the same
    /// id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_node(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims2(self.shape(v))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    /// `a[m,k] * b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m,k] * b[n,k]^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        if self.shape(b).len() != 2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let (br, bc) = self.dims(b);
        let (kb, n, lb) = if trans_b {
            (bc, br, Layout::transposed(bc))
        } else {
            (br, bc, Layout::row_major(bc))
        };
        if k != kb {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            self.data(a),
            Layout::row_major(k),
            self.data(b),
            lb,
            T::zero(),
            &mut out,
            Layout::row_major(n),
        );
        let shape = if self.shape(a).len() == 1 {
            vec![n]
        } else {
            let mut s = self.shape(a).to_vec();
            *s.last_mut().unwrap() = n;
            s
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// Adds a length-`n` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims(x);
        if self.value(bias).numel() != n {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias).to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v = *v + b[i % n];
        }
        Ok(self.push(value, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.zip(a, b, |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.zip(a, b, |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.zip(a, b, |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Elementwise product with a constant of the same shape (masks,
    /// dropout keep-scales, fixed loss weights).
    pub fn mul_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        if self.value(a).numel() != c.numel() {
            return Err(mismatch("mul_const", self.shape(a), c.shape()));
        }
        let data = self
            .data(a)
            .iter()
            .zip(c.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::MulConst(a, c.data().to_vec()), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::lit(GELU_C);
        let k = T::lit(GELU_A);
        let half = T::lit(0.5);
        self.unary(
            a,
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if n == 0 {
            return Err(invalid("softmax", "empty axis"));
        }
        let mut value = self.value(a).clone();
        for r in 0..m {
            softmax_in_place(value.row_mut(r));
        }
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (m, n) = self.dims(x);
        if n < 2 {
            return Err(invalid("layer_norm", "need at least two features"));
        }
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let nf = T::lit(n as f64);
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut out = vec![T::zero(); m * n];
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Natural log with inputs below `floor` raised to `floor`; such inputs
    /// receive zero gradient and are counted in [`Diagnostics`].
    pub fn log_clamped(&mut self, a: Var, floor: T) -> Var {
        let clamped = self.data(a).iter().filter(|&&v| !(v >= floor)).count();
        self.diagnostics.clamped_logs += clamped;
        self.unary(a, |x| x.max(floor).ln(), Op::LogClamped { x: a, floor })
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.log_clamped(a, T::min_positive_value())
    }

    /// L2 norm of each row: `[m, n] -> [m]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let xs = self.data(a);
        let data: Vec<T> = (0..m)
            .map(|r| xs[r * n..(r + 1) * n].iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        self.push(Tensor::vector(data), Op::RowNorm(a), &[a])
    }

    /// Scales every row to unit L2 norm. Zero rows stay zero and are
    /// counted in [`Diagnostics`].
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut value = self.value(a).clone();
        let mut norms = vec![T::zero(); m];
        let mut zero_rows = 0;
        for (r, norm) in norms.iter_mut().enumerate() {
            let row = value.row_mut(r);
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            *norm = nrm;
            if nrm > T::zero() {
                row.iter_mut().for_each(|v| *v = *v / nrm);
            } else {
                zero_rows += 1;
                row.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        debug_assert_eq!(value.numel(), m * n);
        self.diagnostics.zero_norm_rows += zero_rows;
        self.push(value, Op::NormalizeRows { x: a, norms }, &[a])
    }

    /// Pairwise cosine similarity of the rows of `a[m,l]` and `b[n,l]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a);
        let nb = self.normalize_rows(b);
        self.matmul_t(na, nb)
    }

    /// Cosine similarity of two vectors as a scalar node. Zero-norm inputs
    /// yield 0 and bump [`Diagnostics::zero_norm_rows`].
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if self.value(b).numel() != n {
            return Err(mismatch("cosine_similarity", self.shape(a), self.shape(b)));
        }
        let ra = self.reshape(a, vec![1, n])?;
        let rb = self.reshape(b, vec![1, n])?;
        let c = self.cosine_rows(ra, rb)?;
        self.reshape(c, Vec::new())
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).numel().max(1) as f64);
        let s = self.data(a).iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = T::lit(self.value(a).numel().max(1) as f64);
        let s = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::new(shape, self.data(a).to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Selects rows (with repetition allowed): `[m, n] -> [index.len(), n]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(invalid("gather_rows", format!("row {bad} out of {m}")));
        }
        let xs = self.data(x);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            data.extend_from_slice(&xs[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![index.len(), n], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Interleaves `P` matrices of shape `[B, n]` into `[B*P, n]` where
    /// output row `b*P + p` is row `b` of `parts[p]`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| invalid("interleave_rows", "no parts"))?;
        let (b, n) = self.dims(first);
        for &p in parts {
            if self.dims(p) != (b, n) {
                return Err(mismatch("interleave_rows", self.shape(first), self.shape(p)));
            }
        }
        let np = parts.len();
        let mut data = vec![T::zero(); b * np * n];
        for (p, &part) in parts.iter().enumerate() {
            let src = self.data(part);
            for r in 0..b {
                let dst = (r * np + p) * n;
                data[dst..dst + n].copy_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        let value = Tensor::new(vec![b * np, n], data)?;
        Ok(self.push(value, Op::InterleaveRows(parts.to_vec()), parts))
    }

    /// Columns `start..start+len` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + len > n {
            return Err(invalid("slice_cols", format!("{start}+{len} > {n}")));
        }
        let xs = self.data(x);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&xs[r * n + start..r * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Adds rows `0..block` of `table` to every consecutive block of
    /// `block` rows in `x`.
    pub fn add_positional(&mut self, x: Var, table: Var, block: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        let (p, tn) = self.dims(table);
        if tn != n || block == 0 || m % block != 0 {
            return Err(mismatch("add_positional", self.shape(x), self.shape(table)));
        }
        if block > p {
            return Err(invalid(
                "add_positional",
                format!("sequence length {block} exceeds positional table length {p}"),
            ));
        }
        let t = self.data(table).to_vec();
        let mut value = self.value(x).clone();
        for r in 0..m {
            let pos = r % block;
            for (v, &e) in value.row_mut(r).iter_mut().zip(&t[pos * n..(pos + 1) * n]) {
                *v = *v + e;
            }
        }
        Ok(self.push(value, Op::AddPositional { x, table, block }, &[x, table]))
    }

    /// Multi-head scaled dot-product self-attention over independent blocks.
    ///
    /// `q`, `k`, `v` are `[blocks*block, width]`; heads split `width`
    /// evenly. `keep`, when given, multiplies the attention probabilities
    /// (dropout) and has `blocks*heads*block*block` entries.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        heads: usize,
        keep: Option<&Tensor<T>>,
    ) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (rows, width) = self.dims(q);
        if block == 0 || rows % block != 0 || heads == 0 || width % heads != 0 {
            return Err(invalid(
                "attention",
                format!("rows {rows}, block {block}, width {width}, heads {heads}"),
            ));
        }
        let blocks = rows / block;
        let dh = width / heads;
        let kk = block * block;
        if let Some(mask) = keep {
            if mask.numel() != blocks * heads * kk {
                return Err(invalid("attention", "dropout mask size"));
            }
        }
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let strided = Layout { rs: width, cs: 1 };
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![T::zero(); blocks * heads * kk];
        let mut out = vec![T::zero(); rows * width];
        let mut dropped = vec![T::zero(); kk];
        for b in 0..blocks {
            for h in 0..heads {
                let off = b * block * width + h * dh;
                let pidx = (b * heads + h) * kk;
                let p = &mut probs[pidx..pidx + kk];
                gemm(
                    block,
                    dh,
                    block,
                    scale,
                    &qd[off..],
                    strided,
                    &kd[off..],
                    Layout { rs: 1, cs: width },
                    T::zero(),
                    p,
                    Layout::row_major(block),
                );
                for r in 0..block {
                    softmax_in_place(&mut p[r * block..(r + 1) * block]);
                }
                let pd: &[T] = match keep {
                    Some(mask) => {
                        for (d, (&pv, &m)) in dropped
                            .iter_mut()
                            .zip(p.iter().zip(&mask.data()[pidx..pidx + kk]))
                        {
                            *d = pv * m;
                        }
                        &dropped
                    }
                    None => p,
                };
                gemm(
                    block,
                    block,
                    dh,
                    T::one(),
                    pd,
                    Layout::row_major(block),
                    &vd[off..],
                    strided,
                    T::zero(),
                    &mut out[off..],
                    strided,
                );
            }
        }
        let value = Tensor::new(self.shape(q).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                block,
                heads,
                probs,
                keep: keep.map(|m| m.data().to_vec()),
            },
            &[q, k, v],
        ))
    }

    /// Mean of selected rows per group: `[m, n] -> [groups.len(), n]`.
    /// Empty groups give zero rows.
    pub fn segment_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (m, n) = self.dims(x);
        let xs = self.data(x);
        let mut data = vec![T::zero(); groups.len() * n];
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let inv = T::one() / T::lit(rows.len() as f64);
            let dst = &mut data[g * n..(g + 1) * n];
            for &r in rows {
                if r >= m {
                    return Err(invalid("segment_mean", format!("row {r} out of {m}")));
                }
                for (d, &s) in dst.iter_mut().zip(&xs[r * n..(r + 1) * n]) {
                    *d = *d + s * inv;
                }
            }
        }
        let value = Tensor::new(vec![groups.len(), n], data)?;
        Ok(self.push(
            value,
            Op::SegmentMean {
                x,
                groups: groups.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse pass from a one-element `loss`. Clears gradients of any
    /// earlier pass first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            crate::backward::propagate(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the gradients of every parameter node into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        let mut entries: Vec<_> = self.params.iter().collect();
        entries.sort_by_key(|(id, _)| **id);
        for (&id, &v) in entries {
            if let Some(g) = &self.grads[v.0] {
                store.accumulate(id, g);
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}
