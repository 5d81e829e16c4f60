//! Dense row-major `f64` tensors and a reverse-mode autodiff tape.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. Nodes are appended in evaluation order, so the tape itself is
//! a topological order and [`Tape::backward`] just walks it in reverse.
//! Parameter leaves borrow their values from the caller (usually a
//! [`crate::nn::ParamStore`]) instead of copying them onto the tape.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AggregatePlan, AggregateSaved};

/// Offset inside the KL logarithm so exact zeros in the target survive.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<TensorRepr> for Tensor {
    type Error = Error;
    fn try_from(r: TensorRepr) -> Result<Self> {
        Tensor::new(r.shape, r.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!("extents must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient store, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", format!("{} vs {}", g.len(), self.data.len())));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing width for a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    #[default]
    Max,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MulConst(Var, Arc<Vec<f64>>),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    RepeatRows(Var),
    PoolRows(Var, Pool, Vec<usize>),
    Aggregate(Var, Arc<AggregatePlan>, Box<AggregateSaved>),
    MaskedSoftmax(Var, Arc<Vec<bool>>),
    KlDiv { pred: Var, target: Arc<Vec<f64>>, mask: Arc<Vec<f64>>, valid_rows: usize },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn cols_of(shape: &[usize]) -> usize {
    if shape.len() >= 2 {
        shape[1..].iter().product()
    } else {
        1
    }
}

/// C (m×n) += A (m×k) · B (k×n) with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices that cover the strided extents given.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<'a> {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.index]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value: Cow::Owned(value), op, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.index < self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor { shape: n.shape.clone(), data: n.value.to_vec(), requires_grad: false, grad: None }
    }

    /// Records a leaf that copies `t`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a leaf that borrows `t` for the lifetime of the tape.
    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: Cow::Borrowed(&t.data),
            op: Op::Leaf,
            requires_grad: t.requires_grad,
        });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), k as isize, 1, self.value(b), n as isize, 1, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `x[N,M] + bias[M]`, broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let m = cols_of(&sx);
        if self.value(bias).len() != m || sx.len() != 2 {
            return Err(Error::shape("add_row", format!("{sx:?} + {:?}", self.shape(bias))));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(sx, out, Op::AddRow(x, bias), rg))
    }

    /// Affine map `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a, b]));
        Ok(self.push(shape, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a, b]));
        Ok(self.push(shape, out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a, b]));
        Ok(self.push(shape, out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        self.push(shape, out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        self.push(shape, out, Op::Relu(a), rg)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Arc<Vec<f64>>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", format!("{} vs {}", c.len(), self.value(a).len())));
        }
        let out = self.value(a).iter().zip(c.iter()).map(|(x, m)| x * m).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(&[a]));
        Ok(self.push(shape, out, Op::MulConst(a, c), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.shape(first)[0];
        let widths: Vec<usize> = parts.iter().map(|&p| cols_of(self.shape(p))).collect();
        if parts.iter().any(|&p| self.shape(p)[0] != rows || self.shape(p).len() > 2) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = cols_of(self.shape(first));
        if parts.iter().any(|&p| cols_of(self.shape(p)) != cols || self.shape(p).len() != 2) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p));
            rows += self.shape(p)[0];
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || len == 0 || start + len > s[0] {
            return Err(Error::shape("slice_rows", format!("{start}+{len} of {s:?}")));
        }
        let c = s[1];
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![len, c], out, Op::SliceRows(a, start), rg))
    }

    /// Broadcasts a `[1,F]` row to `[n,F]`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != 1 || n == 0 {
            return Err(Error::shape("repeat_rows", format!("{s:?} x {n}")));
        }
        let out = self.value(a).repeat(n);
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, s[1]], out, Op::RepeatRows(a), rg))
    }

    /// Column-wise reduction over rows, `[N,F] -> [1,F]`.
    pub fn pool_rows(&mut self, a: Var, pool: Pool) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("pool_rows", format!("{s:?}")));
        }
        let (n, f) = (s[0], s[1]);
        let v = self.value(a);
        let mut out = vec![0.0; f];
        let mut arg = Vec::new();
        match pool {
            Pool::Max => {
                arg = vec![0usize; f];
                out.copy_from_slice(&v[..f]);
                for r in 1..n {
                    for c in 0..f {
                        if v[r * f + c] > out[c] {
                            out[c] = v[r * f + c];
                            arg[c] = r;
                        }
                    }
                }
            }
            Pool::Mean => {
                for row in v.chunks(f) {
                    out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                out.iter_mut().for_each(|o| *o /= n as f64);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![1, f], out, Op::PoolRows(a, pool, arg), rg))
    }

    /// Multi-aggregator neighbourhood reduction described by `plan`.
    pub fn aggregate(&mut self, x: Var, plan: Arc<AggregatePlan>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != plan.node_count() {
            return Err(Error::shape(
                "aggregate",
                format!("features {s:?} for a graph of {} nodes", plan.node_count()),
            ));
        }
        let (out, saved) = plan.forward(self.value(x), s[1]);
        let width = plan.output_width(s[1]);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![s[0], width], out, Op::Aggregate(x, plan, Box::new(saved)), rg))
    }

    /// Row softmax restricted to `mask`; masked slots are exactly zero.
    pub fn masked_softmax(&mut self, logits: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || mask.len() != s[0] * s[1] {
            return Err(Error::shape("masked_softmax", format!("{s:?} with mask of {}", mask.len())));
        }
        let out = masked_softmax_rows(self.value(logits), &mask, s[1]);
        let rg = self.rg(&[logits]);
        Ok(self.push(s, out, Op::MaskedSoftmax(logits, mask), rg))
    }

    /// Mean over valid rows of `Σ mask·t·ln((t+ε)/(p+ε))`.
    pub fn kl_div(&mut self, pred: Var, target: Arc<Vec<f64>>, mask: Arc<Vec<f64>>) -> Result<Var> {
        let s = self.shape(pred).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("kl_div", format!("{s:?}")));
        }
        let (value, valid_rows) = kl_divergence(&target, self.value(pred), &mask, s[1])?;
        let rg = self.rg(&[pred]);
        Ok(self.push(vec![1], vec![value], Op::KlDiv { pred, target, mask, valid_rows }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.owns(loss) {
            return Err(Error::BackwardBeforeForward);
        }
        let shape = &self.nodes[loss.index].shape;
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.index];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.index].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.index].shape, &self.nodes[b.index].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                // dA = G · Bᵀ
                acc(*a, &mut |da| gemm(m, n, k, g, n as isize, 1, vb, 1, n as isize, da));
                // dB = Aᵀ · G
                acc(*b, &mut |db| gemm(k, m, n, va, 1, k as isize, g, n as isize, 1, db));
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let m = self.nodes[b.index].value.len();
                acc(*b, &mut |db| {
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb.iter()) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va.iter()) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * c)),
            Op::Relu(a) => {
                let x = &self.nodes[a.index].value;
                acc(*a, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x.iter()) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::MulConst(a, c) => {
                acc(*a, &mut |d| {
                    for ((d, g), m) in d.iter_mut().zip(g).zip(c.iter()) {
                        *d += g * m;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.index].value.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::ConcatCols(parts) => {
                let total = cols_of(&node.shape);
                let rows = node.shape[0];
                let mut off = 0;
                for p in parts {
                    let w = cols_of(&self.nodes[p.index].shape);
                    acc(*p, &mut |d| {
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + w];
                            d[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.index].value.len();
                    acc(*p, &mut |d| d.iter_mut().zip(&g[off..off + len]).for_each(|(d, g)| *d += g));
                    off += len;
                }
            }
            Op::SliceRows(a, start) => {
                let c = node.shape[1];
                acc(*a, &mut |d| {
                    d[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(d, g)| *d += g);
                });
            }
            Op::RepeatRows(a) => {
                let f = node.shape[1];
                acc(*a, &mut |d| {
                    for row in g.chunks(f) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::PoolRows(a, pool, arg) => {
                let n = self.nodes[a.index].shape[0];
                let f = node.shape[1];
                acc(*a, &mut |d| match pool {
                    Pool::Max => {
                        for c in 0..f {
                            d[arg[c] * f + c] += g[c];
                        }
                    }
                    Pool::Mean => {
                        for r in 0..n {
                            for c in 0..f {
                                d[r * f + c] += g[c] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::Aggregate(x, plan, saved) => {
                let f = self.nodes[x.index].shape[1];
                let xv = &self.nodes[x.index].value;
                acc(*x, &mut |d| plan.backward(xv, f, saved, g, d));
            }
            Op::MaskedSoftmax(a, mask) => {
                let k = node.shape[1];
                let y = &node.value;
                acc(*a, &mut |d| {
                    for r in 0..node.shape[0] {
                        let span = r * k..(r + 1) * k;
                        let dot: f64 = (r * k..(r + 1) * k).filter(|&i| mask[i]).map(|i| y[i] * g[i]).sum();
                        for i in span {
                            if mask[i] {
                                d[i] += y[i] * (g[i] - dot);
                            }
                        }
                    }
                });
            }
            Op::KlDiv { pred, target, mask, valid_rows } => {
                let p = &self.nodes[pred.index].value;
                let scale = g[0] / *valid_rows as f64;
                acc(*pred, &mut |d| {
                    for i in 0..d.len() {
                        if mask[i] != 0.0 {
                            d[i] -= scale * mask[i] * target[i] / (p[i] + KL_EPSILON);
                        }
                    }
                });
            }
        }
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Writes the gradient for `v` into `t.grad`, zero-filled when the loss
    /// does not depend on `v`.
    pub fn write_to(&self, v: Var, t: &mut Tensor) -> Result<()> {
        let zeros;
        let g = match self.get(v) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; t.len()];
                &zeros
            }
        };
        t.accumulate_grad(g)
    }
}

pub(crate) fn masked_softmax_rows(logits: &[f64], mask: &[bool], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (r, row) in logits.chunks(k).enumerate() {
        let m = &mask[r * k..(r + 1) * k];
        let max = row.iter().zip(m).filter(|(_, &ok)| ok).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let o = &mut out[r * k..(r + 1) * k];
        let mut z = 0.0;
        for i in 0..k {
            if m[i] {
                o[i] = (row[i] - max).exp();
                z += o[i];
            }
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Returns the mean masked KL(target ‖ predicted) and the number of rows that
/// contributed.
pub(crate) fn kl_divergence(target: &[f64], pred: &[f64], mask: &[f64], k: usize) -> Result<(f64, usize)> {
    if target.len() != pred.len() || mask.len() != pred.len() || k == 0 || pred.len() % k != 0 {
        return Err(Error::shape(
            "kl_loss",
            format!("target {} / predicted {} / mask {} with k={k}", target.len(), pred.len(), mask.len()),
        ));
    }
    if let Some(i) = target.iter().position(|&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::InvalidDistribution(format!("target entry {i} is {}", target[i])));
    }
    if let Some(i) = pred.iter().position(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidDistribution(format!("predicted entry {i} is {}", pred[i])));
    }
    let mut total = 0.0;
    let mut rows = 0;
    for r in 0..pred.len() / k {
        let span = r * k..(r + 1) * k;
        if mask[span.clone()].iter().all(|&m| m == 0.0) {
            continue;
        }
        rows += 1;
        total += span
            .filter(|&i| mask[i] != 0.0)
            .map(|i| mask[i] * target[i] * ((target[i] + KL_EPSILON) / (pred[i] + KL_EPSILON)).ln())
            .sum::<f64>();
    }
    if rows == 0 {
        return Err(Error::NoValidRows);
    }
    Ok((total / rows as f64, rows))
}
