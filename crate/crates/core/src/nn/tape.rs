//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Every operation appends one node holding its forward value. Because a node
//! can only reference nodes created before it, the record is already in
//! topological order and `backward` is a single reverse sweep.

use std::borrow::Cow;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x Wᵀ + b`, row-wise when `x` is a matrix.
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Slice {
        src: NodeId,
        start: usize,
    },
    Row {
        src: NodeId,
        row: usize,
    },
    StackRows(Vec<NodeId>),
    Concat(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Dot(NodeId, NodeId),
    Softmax(NodeId),
    WindowedAttention {
        keys: NodeId,
        proj: NodeId,
        windows: Vec<(usize, usize)>,
        weights: Vec<Vec<f64>>,
    },
    Dropout {
        src: NodeId,
        mask: Vec<f64>,
    },
    Mse {
        pred: NodeId,
        target: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradient of a scalar loss with respect to every node that needs one.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `None` when the node does not feed the loss or was a constant.
    pub fn get(&self, id: NodeId) -> Option<Tensor> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[id.0].clone(), g.clone()).expect("shape recorded at forward time"))
    }

    /// Like [`Gradients::get`] but returns zeros for unreached nodes.
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor {
        self.get(id).unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Attention weights recorded by a windowed-attention node, one vector per
    /// focal frame covering its window in index order.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[Vec<f64>]> {
        match &self.nodes[id.0].op {
            Op::WindowedAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Tensor) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Trainable leaf owning its value.
    pub fn param_owned(&mut self, value: Tensor) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::input(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 {
            return Err(Error::input("affine weight must be a matrix"));
        }
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != in_dim {
            return Err(Error::input(format!(
                "affine: input width {} does not match weight {out_dim}x{in_dim}",
                xv.cols()
            )));
        }
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [out_dim] {
                    return Err(Error::input(format!(
                        "affine: bias shape {:?}, expected [{out_dim}]",
                        bv.shape()
                    )));
                }
                Some(bv.data())
            }
            None => None,
        };
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * out_dim);
        let wd = wv.data();
        for r in 0..rows {
            let xr = xv.row(r);
            for o in 0..out_dim {
                let wr = &wd[o * in_dim..(o + 1) * in_dim];
                let mut s = bias.map_or(0.0, |b| b[o]);
                s += wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                out.push(s);
            }
        }
        let shape = if xv.rank() == 2 {
            vec![rows, out_dim]
        } else {
            vec![out_dim]
        };
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(value, Op::Affine { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Sigmoid(x), &[x])
    }

    /// Contiguous sub-vector `src[start..start + len]`.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let sv = self.value(src);
        if sv.rank() != 1 || start + len > sv.len() || len == 0 {
            return Err(Error::input(format!(
                "slice {start}..{} out of range for shape {:?}",
                start + len,
                sv.shape()
            )));
        }
        let value = Tensor::vector(sv.data()[start..start + len].to_vec());
        Ok(self.derived(value, Op::Slice { src, start }, &[src]))
    }

    pub fn row(&mut self, src: NodeId, row: usize) -> Result<NodeId> {
        let sv = self.value(src);
        if sv.rank() != 2 || row >= sv.rows() {
            return Err(Error::input(format!("row {row} out of range for {:?}", sv.shape())));
        }
        let value = Tensor::vector(sv.row(row).to_vec());
        Ok(self.derived(value, Op::Row { src, row }, &[src]))
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = rows.first().ok_or_else(|| Error::input("stack of no rows"))?;
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != width {
                return Err(Error::input("stack_rows needs equal-length vectors"));
            }
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows.len(), width, data)?;
        Ok(self.derived(value, Op::StackRows(rows.to_vec()), rows))
    }

    /// Concatenation along the leading axis: vectors end to end, or matrices
    /// with equal column counts stacked vertically.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::input("concat of nothing"))?;
        let rank = self.value(*first).rank();
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != rank || (rank == 2 && v.cols() != cols) {
                return Err(Error::input("concat parts have incompatible shapes"));
            }
            data.extend_from_slice(v.data());
        }
        let value = if rank == 1 {
            Tensor::vector(data)
        } else {
            let rows = data.len() / cols;
            Tensor::matrix(rows, cols, data)?
        };
        Ok(self.derived(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::input("concat of nothing"))?;
        let rows = self.value(*first).rows();
        let mut width = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.rows() != rows {
                return Err(Error::input("concat_cols needs matrices with equal row counts"));
            }
            width += v.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, width, data)?;
        Ok(self.derived(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "dot")?;
        let (av, bv) = (self.value(a), self.value(b));
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        Ok(self.derived(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.is_empty() {
            return Err(Error::input("softmax needs a nonempty vector"));
        }
        if xv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::input("softmax input contains NaN"));
        }
        let value = Tensor::vector(softmax_values(xv.data()));
        Ok(self.derived(value, Op::Softmax(x), &[x]))
    }

    /// Banded attention. `proj[t]` is the already-transformed query of frame
    /// `t`, so the score of key `k` is `keys[k] · proj[t]`. Window `t` is the
    /// inclusive index range `windows[t]`; keys outside it get no weight at
    /// all. Returns the `T x H` matrix of context vectors.
    pub fn windowed_attention(&mut self, keys: NodeId, proj: NodeId, windows: Vec<(usize, usize)>) -> Result<NodeId> {
        self.check_same_shape(keys, proj, "windowed_attention")?;
        let (kv, pv) = (self.value(keys), self.value(proj));
        if kv.rank() != 2 {
            return Err(Error::input("attention keys must be a matrix"));
        }
        let (n, h) = (kv.rows(), kv.cols());
        if windows.len() != n {
            return Err(Error::input(format!("{} windows for {n} frames", windows.len())));
        }
        let mut ctx = vec![0.0; n * h];
        let mut weights = Vec::with_capacity(n);
        for (t, &(lo, hi)) in windows.iter().enumerate() {
            if lo > hi || hi >= n {
                return Err(Error::input(format!("window {lo}..={hi} invalid for {n} frames")));
            }
            let q = pv.row(t);
            let scores: Vec<f64> = (lo..=hi)
                .map(|k| kv.row(k).iter().zip(q).map(|(a, b)| a * b).sum())
                .collect();
            let w = softmax_values(&scores);
            let out = &mut ctx[t * h..(t + 1) * h];
            for (k, &a) in (lo..=hi).zip(&w) {
                for (o, v) in out.iter_mut().zip(kv.row(k)) {
                    *o += a * v;
                }
            }
            weights.push(w);
        }
        let value = Tensor::matrix(n, h, ctx)?;
        let op = Op::WindowedAttention {
            keys,
            proj,
            windows,
            weights,
        };
        Ok(self.derived(value, op, &[keys, proj]))
    }

    /// Multiplies by a fixed mask (inverted dropout).
    pub fn dropout_mask(&mut self, src: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let sv = self.value(src);
        if mask.len() != sv.len() {
            return Err(Error::input("dropout mask length mismatch"));
        }
        let data = sv.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(sv.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::Dropout { src, mask }, &[src]))
    }

    /// Mean of squared differences against a constant target.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::input(format!(
                "mse: prediction {:?} vs target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let n = pv.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let op = Op::Mse {
            pred,
            target: target.data().to_vec(),
        };
        Ok(self.derived(Tensor::scalar(loss), op, &[pred]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::input(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[id.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if let Some(dx) = self.slot(grads, *x) {
                    let wd = wv.data();
                    for r in 0..rows {
                        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &wd[o * in_dim..(o + 1) * in_dim];
                            for (d, wv) in dxr.iter_mut().zip(wr) {
                                *d += go * wv;
                            }
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go == 0.0 {
                                continue;
                            }
                            let dwr = &mut dw[o * in_dim..(o + 1) * in_dim];
                            for (d, xv) in dwr.iter_mut().zip(xr) {
                                *d += go * xv;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        for r in 0..rows {
                            for (d, go) in db.iter_mut().zip(&g[r * out_dim..(r + 1) * out_dim]) {
                                *d += go;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(d) = self.slot(grads, *id) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *d += g * tanh_derivative(*y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Slice { src, start } => {
                if let Some(d) = self.slot(grads, *src) {
                    d[*start..*start + g.len()].iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Row { src, row } => {
                if let Some(d) = self.slot(grads, *src) {
                    let w = g.len();
                    d[row * w..(row + 1) * w].iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::StackRows(rows) | Op::Concat(rows) => {
                let mut offset = 0;
                for id in rows {
                    let len = self.value(*id).len();
                    if let Some(d) = self.slot(grads, *id) {
                        d.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, g)| *d += g);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let width = out.cols();
                let mut col = 0;
                for id in parts {
                    let pw = self.value(*id).cols();
                    if let Some(d) = self.slot(grads, *id) {
                        for r in 0..rows {
                            let src = &g[r * width + col..r * width + col + pw];
                            d[r * pw..(r + 1) * pw].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    }
                    col += pw;
                }
            }
            Op::Dot(a, b) => {
                let s = g[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(bv).for_each(|(d, v)| *d += s * v);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(av).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::Softmax(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let y = out.data();
                    let inner: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                    for i in 0..d.len() {
                        d[i] += y[i] * (g[i] - inner);
                    }
                }
            }
            Op::WindowedAttention {
                keys,
                proj,
                windows,
                weights,
            } => self.attention_backward(*keys, *proj, windows, weights, g, grads),
            Op::Dropout { src, mask } => {
                if let Some(d) = self.slot(grads, *src) {
                    for i in 0..d.len() {
                        d[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).data();
                let scale = 2.0 * g[0] / pv.len() as f64;
                if let Some(d) = self.slot(grads, *pred) {
                    for i in 0..d.len() {
                        d[i] += scale * (pv[i] - target[i]);
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        keys: NodeId,
        proj: NodeId,
        windows: &[(usize, usize)],
        weights: &[Vec<f64>],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (kv, pv) = (self.value(keys), self.value(proj));
        let h = kv.cols();
        let mut dkeys = vec![0.0; kv.len()];
        let mut dproj = vec![0.0; pv.len()];
        for (t, (&(lo, hi), w)) in windows.iter().zip(weights).enumerate() {
            let gt = &g[t * h..(t + 1) * h];
            // d(context)/d(weight_k) = keys[k]
            let dw: Vec<f64> = (lo..=hi)
                .map(|k| kv.row(k).iter().zip(gt).map(|(a, b)| a * b).sum())
                .collect();
            let inner: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            let q = pv.row(t);
            for (j, k) in (lo..=hi).enumerate() {
                let ds = w[j] * (dw[j] - inner);
                let dk = &mut dkeys[k * h..(k + 1) * h];
                for i in 0..h {
                    dk[i] += w[j] * gt[i] + ds * q[i];
                }
                let dq = &mut dproj[t * h..(t + 1) * h];
                for (d, kval) in dq.iter_mut().zip(kv.row(k)) {
                    *d += ds * kval;
                }
            }
        }
        if let Some(d) = self.slot(grads, keys) {
            d.iter_mut().zip(&dkeys).for_each(|(d, v)| *d += v);
        }
        if let Some(d) = self.slot(grads, proj) {
            d.iter_mut().zip(&dproj).for_each(|(d, v)| *d += v);
        }
    }
}

#[cfg(not(feature = "inject-grad-fault"))]
fn tanh_derivative(y: f64) -> f64 {
    1.0 - y * y
}

#[cfg(feature = "inject-grad-fault")]
fn tanh_derivative(y: f64) -> f64 {
    1.01 * (1.0 - y * y)
}

/// Max-subtracted softmax.
fn softmax_values(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
