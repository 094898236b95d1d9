use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, matmul, View};
use super::{AutodiffError, Tensor};
use crate::spd::{matrix_log, matrix_log_vjp, SpdMatrix, SymMatrix};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Region of the computation a node was recorded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// Computation of attention coefficients (queries, keys, scores, softmax).
    AttentionWeights,
}

/// Positions in the recording that delimit the audited token region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    /// The given node holds the token sequence entering the audited region.
    TokensIn(Var),
    /// Nodes recorded from here on lie beyond the audited region.
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddBias,
    Sub,
    Scale,
    Mul,
    MulScalarVar,
    Relu,
    MeanAxis,
    SumAll,
    Reshape,
    Transpose,
    SoftmaxRows,
    LayerNorm,
    Dropout,
    ConcatRows,
    SliceRows,
    ConcatCols,
    SymLog,
    CrossEntropy,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    MulScalarVar { a: Var, w: Var, index: usize },
    Relu(Var),
    MeanAxis { a: Var, axis: usize },
    SumAll(Var),
    Reshape(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, offset: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { a: Var, mask: Vec<f64> },
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    SymLog { a: Var, x: SpdMatrix },
    CrossEntropy { logits: Var, probs: Vec<f64>, target: Vec<f64> },
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Mul(..) => OpKind::Mul,
            Op::MulScalarVar { .. } => OpKind::MulScalarVar,
            Op::Relu(_) => OpKind::Relu,
            Op::MeanAxis { .. } => OpKind::MeanAxis,
            Op::SumAll(_) => OpKind::SumAll,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Transpose(_) => OpKind::Transpose,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SymLog { .. } => OpKind::SymLog,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::MulScalarVar { a, w, .. } => vec![*a, *w],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::MeanAxis { a, .. }
            | Op::SumAll(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::Dropout { a, .. }
            | Op::SliceRows { a, .. }
            | Op::SymLog { a, .. } => vec![*a],
            Op::LayerNorm { x, gain, offset, .. } => vec![*x, *gain, *offset],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub needs_grad: bool,
    pub scope: Option<Scope>,
    pub param: Option<usize>,
}

/// Read-only description of one recorded node, for audits.
#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub var: Var,
    pub kind: OpKind,
    pub inputs: Vec<Var>,
    pub shape: Vec<usize>,
    pub scope: Option<Scope>,
    pub param: Option<usize>,
}

/// Gradients produced by [`Tape::backward`], one slot per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not influence it.
    pub fn of(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::with_shape(self.shapes[v.0].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Accumulates the gradient of every registered parameter into `out[param]`.
    pub fn accumulate_params(&self, out: &mut [Tensor]) {
        for &(p, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                for (o, x) in out[p].data_mut().iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
    }
}

/// Records a computation for reverse-mode differentiation. A tape supports
/// exactly one backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    scope: Option<Scope>,
    markers: Vec<(usize, Marker)>,
    params: Vec<(usize, Var)>,
    train: bool,
    seed: u64,
    dropout_calls: u64,
    consumed: bool,
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

impl Tape {
    /// `train` enables dropout; masks are drawn from a counter-based stream of `seed`.
    pub fn new(train: bool, seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            scope: None,
            markers: Vec::new(),
            params: Vec::new(),
            train,
            seed,
            dropout_calls: 0,
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            scope: self.scope,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool, param: Option<usize>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
            scope: self.scope,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Leaf bound to parameter slot `index`; see [`Gradients::accumulate_params`].
    pub fn param(&mut self, index: usize, value: &Tensor) -> Var {
        let v = self.push_leaf(value.clone(), true, Some(index));
        self.params.push((index, v));
        v
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Records everything produced by `f` under `scope`.
    pub fn scoped<R>(&mut self, scope: Scope, f: impl FnOnce(&mut Tape) -> R) -> R {
        let outer = self.scope.replace(scope);
        let out = f(self);
        self.scope = outer;
        out
    }

    pub fn mark(&mut self, marker: Marker) {
        self.markers.push((self.nodes.len(), marker));
    }

    pub fn markers(&self) -> &[(usize, Marker)] {
        &self.markers
    }

    pub fn node_info(&self) -> Vec<NodeInfo> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeInfo {
                var: Var(i),
                kind: n.op.kind(),
                inputs: n.op.inputs(),
                shape: n.value.shape().to_vec(),
                scope: n.scope,
                param: n.param,
            })
            .collect()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        self.value(v)
            .dims2()
            .ok_or_else(|| mismatch(op, format!("expected a 2-D operand, got {:?}", self.value(v).shape())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m}, {k}] × [{k2}, {n}]")));
        }
        let out = matmul(
            View::new(self.value(a).data(), m, k),
            View::new(self.value(b).data(), k, n),
        );
        Ok(self.push(Tensor::with_shape(vec![m, n], out), Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        Ok(Tensor::with_shape(x.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same(a, b, "add", |p, q| p + q)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds the vector `b` to every row (last axis) of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, bias) = (self.value(a), self.value(b));
        let n = *x.shape().last().unwrap_or(&1);
        if bias.shape() != [n] {
            return Err(mismatch("add_bias", format!("{:?} + {:?}", x.shape(), bias.shape())));
        }
        let data = x
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias.data()).map(|(p, q)| p + q))
            .collect();
        let t = Tensor::with_shape(x.shape().to_vec(), data);
        Ok(self.push(t, Op::AddBias(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::with_shape(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect());
        self.push(t, Op::Scale(a, s))
    }

    /// `a · w[index]` for a vector-valued `w`.
    pub fn mul_scalar_var(&mut self, a: Var, w: Var, index: usize) -> Result<Var, AutodiffError> {
        let wv = self.value(w);
        if index >= wv.len() {
            return Err(mismatch("mul_scalar_var", format!("index {index} into {:?}", wv.shape())));
        }
        let s = wv.data()[index];
        let x = self.value(a);
        let t = Tensor::with_shape(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect());
        Ok(self.push(t, Op::MulScalarVar { a, w, index }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::with_shape(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect());
        self.push(t, Op::Relu(a))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(mismatch("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        Ok(self.push(Tensor::with_shape(new_shape, out), Op::MeanAxis { a, axis }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if shape.contains(&0) || shape.iter().product::<usize>() != x.len() {
            return Err(mismatch("reshape", format!("{:?} → {shape:?}", x.shape())));
        }
        let t = Tensor::with_shape(shape.to_vec(), x.data().to_vec());
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims2(a, "transpose")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(self.push(Tensor::with_shape(vec![c, r], out), Op::Transpose(a)))
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::with_shape(x.shape().to_vec(), out);
        self.push(t, Op::SoftmaxRows(a))
    }

    /// Normalizes every row (token) to zero mean and unit variance, then
    /// applies the learnable `gain` and `offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x);
        let n = *xs.shape().last().unwrap_or(&1);
        if self.value(gain).shape() != [n] || self.value(offset).shape() != [n] {
            return Err(mismatch(
                "layer_norm",
                format!("{:?} with gain {:?}", xs.shape(), self.value(gain).shape()),
            ));
        }
        let g = self.value(gain).data();
        let b = self.value(offset).data();
        let rows = xs.len() / n;
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for (r, row) in xs.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::with_shape(xs.shape().to_vec(), out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. Identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(mismatch("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let len = self.value(a).len();
        let mask: Vec<f64> = if self.train && rate > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(self.dropout_calls);
            let keep = 1.0 / (1.0 - rate);
            (0..len)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        } else {
            vec![1.0; len]
        };
        self.dropout_calls += 1;
        let x = self.value(a);
        let t = Tensor::with_shape(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        Ok(self.push(t, Op::Dropout { a, mask }))
    }

    /// Stacks 2-D operands with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or_else(|| mismatch("concat_rows", "no operands".into()))?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c2) = self.dims2(p, "concat_rows")?;
            if c2 != c {
                return Err(mismatch("concat_rows", format!("{c2} columns, expected {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::with_shape(vec![rows, c], data), Op::ConcatRows(parts.to_vec())))
    }

    /// Places 2-D operands with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or_else(|| mismatch("concat_cols", "no operands".into()))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r2, c) = self.dims2(p, "concat_cols")?;
            if r2 != r {
                return Err(mismatch("concat_cols", format!("{r2} rows, expected {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::with_shape(vec![r, total], data), Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start .. start + len` of a 2-D operand.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims2(a, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(mismatch("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::with_shape(vec![len, c], data), Op::SliceRows { a, start }))
    }

    /// `log` of the symmetric part of a square operand, which must be SPD.
    pub fn sym_log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims2(a, "sym_log")?;
        if r != c {
            return Err(mismatch("sym_log", format!("[{r}, {c}] is not square")));
        }
        let m = nalgebra::DMatrix::from_row_slice(r, c, self.value(a).data());
        let x = SpdMatrix::new((&m + m.transpose()) * 0.5)?;
        let l = matrix_log(&x)?;
        let data = l.as_matrix().transpose().as_slice().to_vec();
        Ok(self.push(Tensor::with_shape(vec![r, c], data), Op::SymLog { a, x }))
    }

    /// `−Σ_c q_c · log softmax(logits)_c` with `q = (1 − eps)·onehot(target) + eps/C`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize, eps: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&eps) {
            return Err(AutodiffError::InvalidEps(eps));
        }
        let z = self.value(logits);
        let c = z.len();
        if c < 2 || (z.shape().len() > 1 && z.shape()[..z.shape().len() - 1].iter().any(|&d| d != 1)) {
            return Err(mismatch("cross_entropy", format!("logits of shape {:?}", z.shape())));
        }
        if target >= c {
            return Err(AutodiffError::InvalidTarget { target, classes: c });
        }
        let mut probs = z.data().to_vec();
        softmax_in_place(&mut probs);
        let max = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let q: Vec<f64> = (0..c)
            .map(|i| eps / c as f64 + if i == target { 1.0 - eps } else { 0.0 })
            .collect();
        let loss = -z.data().iter().zip(&q).map(|(zi, qi)| qi * (zi - lse)).sum::<f64>();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                target: q,
            },
        ))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::StaleTape);
        }
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), AutodiffError> {
        let nodes = &self.nodes;
        let needs = |v: &Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].needs_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].value.dims2().expect("2-D");
                let n = out.shape()[1];
                let gv = View::new(g, m, n);
                if needs(a) {
                    let bv = View::new(nodes[b.0].value.data(), k, n);
                    acc(*a, &mut |s| gemm(gv, bv.t(), 1.0, s));
                }
                if needs(b) {
                    let av = View::new(nodes[a.0].value.data(), m, k);
                    acc(*b, &mut |s| gemm(av.t(), gv, 1.0, s));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(d, v)| *d -= v));
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                let n = nodes[b.0].value.len();
                acc(*b, &mut |s| {
                    for row in g.chunks(n) {
                        add_into(s, row);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(d, v)| *d += k * v)),
            Op::Mul(a, b) => {
                let (x, y) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * y[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * x[j];
                    }
                });
            }
            Op::MulScalarVar { a, w, index } => {
                let x = nodes[a.0].value.data();
                let k = nodes[w.0].value.data()[*index];
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(d, v)| *d += k * v));
                let dot: f64 = g.iter().zip(x).map(|(p, q)| p * q).sum();
                acc(*w, &mut |s| s[*index] += dot);
            }
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        if x[j] > 0.0 {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::MeanAxis { a, axis } => {
                let shape = nodes[a.0].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                acc(*a, &mut |s| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut s[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, v) in dst.iter_mut().zip(src) {
                                *d += v / len as f64;
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Transpose(a) => {
                let (r, c) = nodes[a.0].value.dims2().expect("2-D");
                acc(*a, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = *out.shape().last().unwrap_or(&1);
                let y = out.data();
                acc(*a, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            } => {
                let n = nodes[gain.0].value.len();
                let gv = nodes[gain.0].value.data();
                acc(*x, &mut |s| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let h = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<f64> = (0..n).map(|j| gr[j] * gv[j]).collect();
                        let m1 = dh.iter().sum::<f64>() / n as f64;
                        let m2 = dh.iter().zip(h).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                        for j in 0..n {
                            s[r * n + j] += is * (dh[j] - m1 - h[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            s[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*offset, &mut |s| {
                    for grow in g.chunks(n) {
                        add_into(s, grow);
                    }
                });
            }
            Op::Dropout { a, mask } => acc(*a, &mut |s| {
                for j in 0..s.len() {
                    s[j] += g[j] * mask[j];
                }
            }),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(*p, &mut |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = out.dims2().expect("2-D");
                let mut col = 0;
                for p in parts {
                    let w = nodes[p.0].value.shape()[1];
                    acc(*p, &mut |s| {
                        for i in 0..r {
                            add_into(&mut s[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::SliceRows { a, start } => {
                let c = out.shape()[1];
                acc(*a, &mut |s| add_into(&mut s[start * c..start * c + g.len()], g));
            }
            Op::SymLog { a, x } => {
                let n = x.dim();
                let gm = nalgebra::DMatrix::from_row_slice(n, n, g);
                let upstream = SymMatrix::new((&gm + gm.transpose()) * 0.5)?;
                let v = matrix_log_vjp(x, &upstream)?;
                // d/dA of sym(A) symmetrizes once more, a no-op on a symmetric cotangent
                let vm = v.as_matrix();
                acc(*a, &mut |s| {
                    for r in 0..n {
                        for c in 0..n {
                            s[r * n + c] += vm[(r, c)];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, probs, target } => acc(*logits, &mut |s| {
                for j in 0..s.len() {
                    s[j] += g[0] * (probs[j] - target[j]);
                }
            }),
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
