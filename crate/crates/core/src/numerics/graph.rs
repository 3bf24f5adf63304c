//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already a topological order and backward is a reverse sweep.
//! Values live on the tape as plain [`Tensor`]s; [`Var`] is a handle into it.

use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Mean,
    Max,
}

/// Right-hand-side broadcast patterns for binary ops. Only the patterns the
/// prompter needs exist: `N×D ∘ 1×D`, `N×D ∘ N×1` and scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnKind {
    Relu,
    Gelu,
    Sigmoid,
}

/// Backward rule for an operation implemented outside this module.
///
/// Receives the input values and the upstream gradient of the output and
/// returns one gradient buffer per input, each the length of that input.
pub trait CustomBackward: Send {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f32]) -> Vec<Vec<f32>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary {
        kind: BinKind,
        lhs: Var,
        rhs: Var,
        bcast: Broadcast,
    },
    Affine(Var, f32),
    Unary(UnKind, Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reduce {
        x: Var,
        mode: ReduceMode,
        outer: usize,
        len: usize,
        inner: usize,
        arg: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    Im2col {
        x: Var,
        gh: usize,
        gw: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    leaf_grad: Option<Vec<f32>>,
    param: Option<String>,
}

/// Width of the `conv1d_2to1` kernel; padding is `KERNEL_TAPS / 2` per side.
pub const KERNEL_TAPS: usize = 7;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut value = value;
        value.zero_grad();
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            leaf_grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; it is differentiated iff the tensor requires grad.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named parameter as a leaf. Binding the same name twice returns
    /// the same node, so weight-shared modules accumulate into one gradient.
    pub fn bind_param(&mut self, name: &str, t: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, trainable);
        self.nodes[v.0].param = Some(name.to_string());
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after one or more backward passes.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].leaf_grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.leaf_grad = None;
        }
    }

    /// `(name, gradient)` for every bound trainable parameter that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.nodes.iter().filter_map(|n| match (&n.param, &n.leaf_grad) {
            (Some(name), Some(g)) => Some((name.as_str(), g.as_slice())),
            _ => None,
        })
    }

    // ------------------------------------------------------------------
    // forward ops
    // ------------------------------------------------------------------

    /// `a[..., K] · b[K × P]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() != 2 || ta.cols() != tb.shape()[0] {
            return Err(Error::dim(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, p) = (ta.rows(), ta.cols(), tb.shape()[1]);
        let out = matmul_kernel(ta.data(), tb.data(), m, k, p);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = p;
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::dim(format!("transpose of {:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let t = Tensor::new(&[c, r], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    fn binary(&mut self, kind: BinKind, lhs: Var, rhs: Var) -> Result<Var> {
        let (l, r) = (self.value(lhs), self.value(rhs));
        let bcast = infer_broadcast(l, r)?;
        let (rows, cols) = (l.rows(), l.cols());
        let (ld, rd) = (l.data(), r.data());
        let f = |a: f32, b: f32| match kind {
            BinKind::Add => a + b,
            BinKind::Sub => a - b,
            BinKind::Mul => a * b,
        };
        let mut out = Vec::with_capacity(ld.len());
        for i in 0..rows {
            for j in 0..cols {
                let b = rd[bcast_index(bcast, i, j, cols)];
                out.push(f(ld[i * cols + j], b));
            }
        }
        let t = Tensor::new(l.shape(), out)?;
        let rg = self.rg(&[lhs, rhs]);
        Ok(self.push(
            t,
            Op::Binary {
                kind,
                lhs,
                rhs,
                bcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let t = self.value(x);
        let out: Vec<f32> = t.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(t.shape(), out).unwrap();
        let rg = self.rg(&[x]);
        self.push(t, Op::Affine(x, s), rg)
    }

    fn unary(&mut self, kind: UnKind, x: Var) -> Var {
        let t = self.value(x);
        let out: Vec<f32> = t
            .data()
            .iter()
            .map(|&v| match kind {
                UnKind::Relu => v.max(0.0),
                UnKind::Gelu => gelu(v as f64) as f32,
                UnKind::Sigmoid => sigmoid(v as f64) as f32,
            })
            .collect();
        let t = Tensor::new(t.shape(), out).unwrap();
        let rg = self.rg(&[x]);
        self.push(t, Op::Unary(kind, x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Relu, x)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnKind::Sigmoid, x)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        if !t.all_finite() {
            return Err(Error::Numeric("softmax input".into()));
        }
        let d = t.data();
        let mut out = vec![0.0f32; d.len()];
        let mut buf = vec![0.0f64; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mx = (0..len).map(|k| d[at(k)]).fold(f32::NEG_INFINITY, f32::max) as f64;
                let mut sum = 0.0f64;
                for k in 0..len {
                    buf[k] = (d[at(k)] as f64 - mx).exp();
                    sum += buf[k];
                }
                for k in 0..len {
                    out[at(k)] = (buf[k] / sum) as f32;
                }
            }
        }
        let t = Tensor::new(t.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Collapses `axis` by mean or max. Max routes its gradient to the first
    /// maximal element.
    pub fn reduce(&mut self, x: Var, axis: usize, mode: ReduceMode) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis)?;
        let d = t.data();
        let mut out = vec![0.0f32; outer * inner];
        let mut arg = Vec::new();
        if mode == ReduceMode::Max {
            arg = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                match mode {
                    ReduceMode::Mean => {
                        let s: f64 = (0..len).map(|k| d[at(k)] as f64).sum();
                        out[o * inner + i] = (s / len as f64) as f32;
                    }
                    ReduceMode::Max => {
                        let mut best = 0;
                        for k in 1..len {
                            if d[at(k)] > d[at(best)] {
                                best = k;
                            }
                        }
                        out[o * inner + i] = d[at(best)];
                        arg[o * inner + i] = best;
                    }
                }
            }
        }
        let mut shape: Vec<usize> = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::Reduce {
                x,
                mode,
                outer,
                len,
                inner,
                arg,
            },
            rg,
        ))
    }

    /// Affine map along the last axis: `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        let p = self.value(w).shape()[1];
        if self.value(b).numel() != p {
            return Err(Error::dim(format!(
                "linear bias {:?} for output width {p}",
                self.shape(b)
            )));
        }
        self.add(y, b)
    }

    /// Per-row normalization over the last axis (ε = 1e-5), then affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let t = self.value(x);
        let (rows, d) = (t.rows(), t.cols());
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.numel() != d || b.numel() != d {
            return Err(Error::dim(format!(
                "layer_norm over width {d} with gamma {:?} beta {:?}",
                g.shape(),
                b.shape()
            )));
        }
        let xd = t.data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut rstd = vec![0.0f64; rows];
        let mut out = vec![0.0f32; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] as f64 - mean) * rs;
                xhat[r * d + c] = h as f32;
                out[r * d + c] = (h * g.data()[c] as f64 + b.data()[c] as f64) as f32;
            }
        }
        let t = Tensor::new(t.shape(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Two-channel to one-channel convolution along the feature axis with a
    /// 7-tap kernel and zero padding of 3 on each side: `[2×D] -> [1×D]`.
    pub fn conv1d_2to1(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        if tx.rank() != 2 || tx.shape()[0] != 2 {
            return Err(Error::dim(format!("conv1d_2to1 input {:?}", tx.shape())));
        }
        if tk.shape() != [2, KERNEL_TAPS] || tb.numel() != 1 {
            return Err(Error::dim(format!(
                "conv1d_2to1 kernel {:?} bias {:?}",
                tk.shape(),
                tb.shape()
            )));
        }
        let d = tx.shape()[1];
        let half = KERNEL_TAPS / 2;
        let (xd, kd) = (tx.data(), tk.data());
        let mut out = vec![0.0f32; d];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = tb.data()[0] as f64;
            for c in 0..2 {
                for k in 0..KERNEL_TAPS {
                    let src = o + k;
                    if src < half || src - half >= d {
                        continue;
                    }
                    acc += kd[c * KERNEL_TAPS + k] as f64 * xd[c * d + src - half] as f64;
                }
            }
            *slot = acc as f32;
        }
        let t = Tensor::new(&[1, d], out)?;
        let rg = self.rg(&[x, kernel, bias]);
        Ok(self.push(t, Op::Conv1d { x, kernel, bias }, rg))
    }

    /// Gathers 3×3 neighbourhoods of a `gh×gw` grid stored as `[gh·gw × C]`
    /// rows into `[gh·gw × 9C]`, zero padded. Column `(ky·3+kx)·C + c`.
    pub fn im2col3x3(&mut self, x: Var, gh: usize, gw: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[0] != gh * gw {
            return Err(Error::dim(format!(
                "im2col3x3 of {:?} on {gh}x{gw} grid",
                t.shape()
            )));
        }
        let c = t.shape()[1];
        let d = t.data();
        let mut out = vec![0.0f32; gh * gw * 9 * c];
        for (p, src, col) in im2col_taps(gh, gw) {
            out[p * 9 * c + col * c..p * 9 * c + (col + 1) * c]
                .copy_from_slice(&d[src * c..(src + 1) * c]);
        }
        let t = Tensor::new(&[gh * gw, 9 * c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Im2col { x, gh, gw }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(Error::dim(format!("concat_rows part {:?}", t.shape())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(&[rows, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::dim(format!("concat_cols part {:?}", t.shape())));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(&[rows, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || len == 0 || start + len > t.shape()[0] {
            return Err(Error::dim(format!(
                "slice_rows {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let c = t.cols();
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::new(&[len, c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || len == 0 || start + len > t.cols() {
            return Err(Error::dim(format!(
                "slice_cols {start}..{} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(&[r, len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceCols { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Picks elements by flat index into a rank-1 result.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= t.numel()) {
            return Err(Error::dim(format!("gather {idx:?} from {:?}", t.shape())));
        }
        let data = idx.iter().map(|&i| t.data()[i]).collect();
        let t = Tensor::new(&[idx.len()], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s as f32), Op::Mean(x), rg)
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomBackward>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            rg,
        )
    }

    // ------------------------------------------------------------------
    // backward
    // ------------------------------------------------------------------

    /// Propagates d(loss)/d(leaf) into every reachable differentiable leaf.
    /// Leaf gradients accumulate across calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gy);
                continue;
            }
            self.backward_node(i, &gy, &mut grads);
        }
        for (i, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if let (Some(g), Op::Leaf, true) = (g, &node.op, node.requires_grad) {
                match &mut node.leaf_grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.leaf_grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, g: Vec<f32>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, p) = (ta.rows(), ta.cols(), tb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // gy · bᵀ, with bᵀ materialized so the kernel streams rows
                    let bd = tb.data();
                    let mut bt = vec![0.0f32; p * k];
                    for kk in 0..k {
                        for j in 0..p {
                            bt[j * k + kk] = bd[kk * p + j];
                        }
                    }
                    send(*a, matmul_kernel(gy, &bt, m, p, k));
                }
                if self.nodes[b.0].requires_grad {
                    let mut acc = vec![0.0f64; k * p];
                    for r in 0..m {
                        let gyr = &gy[r * p..(r + 1) * p];
                        for kk in 0..k {
                            let av = ta.data()[r * k + kk] as f64;
                            if av == 0.0 {
                                continue;
                            }
                            let dst = &mut acc[kk * p..(kk + 1) * p];
                            for (d, &g) in dst.iter_mut().zip(gyr) {
                                *d += av * g as f64;
                            }
                        }
                    }
                    send(*b, acc.into_iter().map(|v| v as f32).collect());
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
                let mut g = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        g[a * c + b] = gy[b * r + a];
                    }
                }
                send(*x, g);
            }
            Op::Binary {
                kind,
                lhs,
                rhs,
                bcast,
            } => {
                let (l, r) = (val(*lhs), val(*rhs));
                let (rows, cols) = (l.rows(), l.cols());
                if self.nodes[lhs.0].requires_grad {
                    let g = match kind {
                        BinKind::Add | BinKind::Sub => gy.to_vec(),
                        BinKind::Mul => {
                            let rd = r.data();
                            let mut g = Vec::with_capacity(rows * cols);
                            for i in 0..rows {
                                for j in 0..cols {
                                    g.push(gy[i * cols + j] * rd[bcast_index(*bcast, i, j, cols)]);
                                }
                            }
                            g
                        }
                    };
                    send(*lhs, g);
                }
                if self.nodes[rhs.0].requires_grad {
                    let mut acc = vec![0.0f64; r.numel()];
                    let ld = l.data();
                    for i in 0..rows {
                        for j in 0..cols {
                            let f = i * cols + j;
                            acc[bcast_index(*bcast, i, j, cols)] += match kind {
                                BinKind::Add => gy[f] as f64,
                                BinKind::Sub => -(gy[f] as f64),
                                BinKind::Mul => gy[f] as f64 * ld[f] as f64,
                            };
                        }
                    }
                    send(*rhs, acc.into_iter().map(|v| v as f32).collect());
                }
            }
            Op::Affine(x, s) => send(*x, gy.iter().map(|g| g * s).collect()),
            Op::Unary(kind, x) => {
                let xd = val(*x).data();
                let yd = node.value.data();
                let g = gy
                    .iter()
                    .zip(xd)
                    .zip(yd)
                    .map(|((&g, &xv), &yv)| match kind {
                        UnKind::Relu => {
                            if xv > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        UnKind::Gelu => (g as f64 * gelu_grad(xv as f64)) as f32,
                        UnKind::Sigmoid => g * yv * (1.0 - yv),
                    })
                    .collect();
                send(*x, g);
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                let mut g = vec![0.0f32; y.len()];
                for o in 0..*outer {
                    for ii in 0..*inner {
                        let at = |k: usize| (o * len + k) * inner + ii;
                        let s: f64 = (0..*len).map(|k| gy[at(k)] as f64 * y[at(k)] as f64).sum();
                        for k in 0..*len {
                            g[at(k)] = (y[at(k)] as f64 * (gy[at(k)] as f64 - s)) as f32;
                        }
                    }
                }
                send(*x, g);
            }
            Op::Reduce {
                x,
                mode,
                outer,
                len,
                inner,
                arg,
            } => {
                let mut g = vec![0.0f32; val(*x).numel()];
                for o in 0..*outer {
                    for ii in 0..*inner {
                        let go = gy[o * inner + ii];
                        match mode {
                            ReduceMode::Mean => {
                                let share = go / *len as f32;
                                for k in 0..*len {
                                    g[(o * len + k) * inner + ii] = share;
                                }
                            }
                            ReduceMode::Max => {
                                g[(o * len + arg[o * inner + ii]) * inner + ii] = go;
                            }
                        }
                    }
                }
                send(*x, g);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(*x).cols();
                let rows = rstd.len();
                let gd = val(*gamma).data();
                let mut gx = vec![0.0f32; rows * d];
                let mut gg = vec![0.0f64; d];
                let mut gb = vec![0.0f64; d];
                for r in 0..rows {
                    let (mut m1, mut m2) = (0.0f64, 0.0f64);
                    for c in 0..d {
                        let dy = gy[r * d + c] as f64;
                        let h = xhat[r * d + c] as f64;
                        gg[c] += dy * h;
                        gb[c] += dy;
                        let dh = dy * gd[c] as f64;
                        m1 += dh;
                        m2 += dh * h;
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for c in 0..d {
                        let dh = gy[r * d + c] as f64 * gd[c] as f64;
                        let h = xhat[r * d + c] as f64;
                        gx[r * d + c] = (rstd[r] * (dh - m1 - h * m2)) as f32;
                    }
                }
                send(*x, gx);
                send(*gamma, gg.into_iter().map(|v| v as f32).collect());
                send(*beta, gb.into_iter().map(|v| v as f32).collect());
            }
            Op::Conv1d { x, kernel, bias } => {
                let (tx, tk) = (val(*x), val(*kernel));
                let d = tx.shape()[1];
                let half = KERNEL_TAPS / 2;
                let mut gx = vec![0.0f64; 2 * d];
                let mut gk = vec![0.0f64; 2 * KERNEL_TAPS];
                let mut gb = 0.0f64;
                for (o, &g) in gy.iter().enumerate() {
                    let g = g as f64;
                    gb += g;
                    for c in 0..2 {
                        for k in 0..KERNEL_TAPS {
                            let src = o + k;
                            if src < half || src - half >= d {
                                continue;
                            }
                            let xi = c * d + src - half;
                            gk[c * KERNEL_TAPS + k] += g * tx.data()[xi] as f64;
                            gx[xi] += g * tk.data()[c * KERNEL_TAPS + k] as f64;
                        }
                    }
                }
                send(*x, gx.into_iter().map(|v| v as f32).collect());
                send(*kernel, gk.into_iter().map(|v| v as f32).collect());
                send(*bias, vec![gb as f32]);
            }
            Op::Im2col { x, gh, gw } => {
                let c = val(*x).cols();
                let mut g = vec![0.0f32; gh * gw * c];
                for (p, src, col) in im2col_taps(*gh, *gw) {
                    let from = &gy[p * 9 * c + col * c..p * 9 * c + (col + 1) * c];
                    for (dst, &v) in g[src * c..(src + 1) * c].iter_mut().zip(from) {
                        *dst += v;
                    }
                }
                send(*x, g);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).numel();
                    send(p, gy[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut g = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        g.extend_from_slice(&gy[r * total + start..r * total + start + w]);
                    }
                    send(p, g);
                    start += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = val(*x).cols();
                let mut g = vec![0.0f32; val(*x).numel()];
                g[start * c..start * c + gy.len()].copy_from_slice(gy);
                send(*x, g);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                let w = node.value.cols();
                let mut g = vec![0.0f32; r * c];
                for i in 0..r {
                    g[i * c + start..i * c + start + w].copy_from_slice(&gy[i * w..(i + 1) * w]);
                }
                send(*x, g);
            }
            Op::Reshape(x) => send(*x, gy.to_vec()),
            Op::Gather { x, idx } => {
                let mut g = vec![0.0f32; val(*x).numel()];
                for (&i, &v) in idx.iter().zip(gy) {
                    g[i] += v;
                }
                send(*x, g);
            }
            Op::Sum(x) => send(*x, vec![gy[0]; val(*x).numel()]),
            Op::Mean(x) => {
                let n = val(*x).numel();
                send(*x, vec![gy[0] / n as f32; n]);
            }
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let gs = rule.backward(&ins, &node.value, gy);
                for (&v, g) in inputs.iter().zip(gs) {
                    debug_assert_eq!(g.len(), val(v).numel());
                    send(v, g);
                }
            }
        }
    }
}

fn matmul_kernel(a: &[f32], b: &[f32], m: usize, k: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * p];
    let mut acc = vec![0.0f64; p];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let av = a[i * k + kk] as f64;
            if av == 0.0 {
                continue;
            }
            for (s, &bv) in acc.iter_mut().zip(&b[kk * p..(kk + 1) * p]) {
                *s += av * bv as f64;
            }
        }
        for (o, &s) in out[i * p..(i + 1) * p].iter_mut().zip(&acc) {
            *o = s as f32;
        }
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::domain("reduction over zero-extent axis"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

fn infer_broadcast(l: &Tensor, r: &Tensor) -> Result<Broadcast> {
    if l.shape() == r.shape() {
        return Ok(Broadcast::Same);
    }
    let (rows, cols) = (l.rows(), l.cols());
    let rs = r.shape();
    if (rs == [cols] || rs == [1, cols]) && l.rank() >= 1 {
        return Ok(Broadcast::Row);
    }
    if rs == [rows, 1] && l.rank() == 2 {
        return Ok(Broadcast::Col);
    }
    if r.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    Err(Error::dim(format!(
        "cannot broadcast {:?} against {:?}",
        r.shape(),
        l.shape()
    )))
}

#[inline]
fn bcast_index(b: Broadcast, i: usize, j: usize, cols: usize) -> usize {
    match b {
        Broadcast::Same => i * cols + j,
        Broadcast::Row => j,
        Broadcast::Col => i,
        Broadcast::Scalar => 0,
    }
}

/// `(output position, source position, tap column)` triples for every
/// in-bounds tap of a 3×3 window.
fn im2col_taps(gh: usize, gw: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..gh).flat_map(move |i| {
        (0..gw).flat_map(move |j| {
            (0..9).filter_map(move |col| {
                let (ky, kx) = (col / 3, col % 3);
                let (si, sj) = (i + ky, j + kx);
                if si < 1 || sj < 1 || si - 1 >= gh || sj - 1 >= gw {
                    return None;
                }
                Some((i * gw + j, (si - 1) * gw + (sj - 1), col))
            })
        })
    })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
