use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{clamp_prob, sigmoid, Tensor, PROB_EPS};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRows(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Softmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    L1(Var),
    Sum(Var),
    Mean(Var),
    Mask(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive operations. Nodes are appended in evaluation
/// order, so inputs always precede the nodes that consume them.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape(v.index));
        }
        Ok(&self.nodes[v.index])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.index].value.shape()
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.index].needs_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records a leaf. Its gradient is reported by [`Tape::backward`] when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let needs_grad = tensor.requires_grad;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn constant(&mut self, tensor: Tensor) -> Result<Var> {
        let mut t = tensor;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.check(a)?.value, &self.check(b)?.value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", &[ta.shape(), tb.shape()]));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push(
            "matmul",
            Tensor::matrix(m, n, out)?,
            Op::MatMul(a, b),
            &[a, b],
        )
    }

    fn zip(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (&self.check(a)?.value, &self.check(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, &[ta.shape(), tb.shape()]));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`d` vector to every row of an `[n, d]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (&self.check(a)?.value, &self.check(bias)?.value);
        if ta.shape().len() != 2 || tb.shape() != [ta.shape()[1]] {
            return Err(mismatch("add_row", &[ta.shape(), tb.shape()]));
        }
        let d = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % d])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add_row", t, Op::AddRow(a, bias), &[a, bias])
    }

    /// Scales row `i` of `a` (an `[n, d]` matrix or length-`n` vector) by `w[i]`.
    pub fn mul_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (&self.check(a)?.value, &self.check(w)?.value);
        if ta.shape().is_empty() || tw.shape() != [ta.rows()] {
            return Err(mismatch("mul_rows", &[ta.shape(), tw.shape()]));
        }
        let d = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tw.data()[i / d])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul_rows", t, Op::MulRows(a, w), &[a, w])
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ta = &self.check(a)?.value;
        let data = ta.data().iter().map(|x| scale * x + shift).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("affine", t, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    /// Concatenates along the last axis. All inputs share their leading dims.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(mismatch("concat", &[]));
        }
        let shapes: Vec<Vec<usize>> = parts
            .iter()
            .map(|v| self.check(*v).map(|n| n.value.shape().to_vec()))
            .collect::<Result<_>>()?;
        let rank = shapes[0].len();
        let ok = rank >= 1
            && shapes
                .iter()
                .all(|s| s.len() == rank && s[..rank - 1] == shapes[0][..rank - 1]);
        if !ok {
            let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
            return Err(mismatch("concat", &refs));
        }
        let rows = if rank == 2 { shapes[0][0] } else { 1 };
        let widths: Vec<usize> = shapes.iter().map(|s| s[rank - 1]).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[v.index].value.data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 2 {
            vec![rows, total]
        } else {
            vec![total]
        };
        let t = Tensor::new(shape, data)?;
        self.push("concat", t, Op::Concat(parts.to_vec()), parts)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let ta = &self.check(a)?.value;
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| f(*x)).collect(),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, sigmoid)?;
        self.push("sigmoid", t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::tanh)?;
        self.push("tanh", t, Op::Tanh(a), &[a])
    }

    /// Natural log with its argument clamped into `[1e-12, 1 - 1e-12]`.
    /// The clamp has zero derivative outside that interval.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| clamp_prob(x).ln())?;
        self.push("ln", t, Op::Ln(a), &[a])
    }

    /// Softmax over the last axis (the whole vector for rank 1).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = &self.check(a)?.value;
        if ta.shape().is_empty() {
            return Err(mismatch("softmax", &[ta.shape()]));
        }
        let d = ta.shape()[ta.shape().len() - 1];
        let mut data = ta.data().to_vec();
        if d > 0 {
            for chunk in data.chunks_mut(d) {
                softmax_in_place(chunk);
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("softmax", t, Op::Softmax(a), &[a])
    }

    /// Softmax over contiguous segments of a vector; segment `s` spans
    /// `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let ta = &self.check(a)?.value;
        let valid = ta.shape().len() == 1
            && !offsets.is_empty()
            && offsets[0] == 0
            && *offsets.last().unwrap() == ta.len()
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !valid {
            return Err(mismatch("segment_softmax", &[ta.shape(), &[offsets.len()]]));
        }
        let mut data = ta.data().to_vec();
        for w in offsets.windows(2) {
            softmax_in_place(&mut data[w[0]..w[1]]);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(
            "segment_softmax",
            t,
            Op::SegmentSoftmax(a, offsets.to_vec()),
            &[a],
        )
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.value.data().iter().map(|x| x.abs()).sum();
        self.push("l1_norm", Tensor::scalar(s), Op::L1(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.check(a)?.value.data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.check(a)?.value;
        if t.is_empty() {
            return Err(mismatch("mean", &[t.shape()]));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Multiplies elementwise by a fixed mask. This is the recorded form of
    /// dropout; see [`Tape::dropout`].
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = &self.check(a)?.value;
        if mask.len() != ta.len() {
            return Err(mismatch("mask", &[ta.shape(), &[mask.len()]]));
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mask", t, Op::Mask(a, mask), &[a])
    }

    /// Inverted dropout. Identity when `rate == 0` or when `rng` is `None`
    /// (evaluation mode).
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} not in [0, 1)"
            )));
        }
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => {
                self.check(a)?;
                return Ok(a);
            }
        };
        let keep = 1.0 - rate;
        let n = self.check(a)?.value.len();
        let mask = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.apply_mask(a, mask)
    }

    /// Row gather: `out[i] = a[idx[i]]` (rows of a matrix, elements of a vector).
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = &self.check(a)?.value;
        if ta.shape().is_empty() {
            return Err(mismatch("gather", &[ta.shape()]));
        }
        let rows = ta.rows();
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(mismatch("gather", &[ta.shape(), &[*bad]]));
        }
        let d = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&ta.data()[i * d..(i + 1) * d]);
        }
        let shape = if ta.shape().len() == 2 {
            vec![idx.len(), d]
        } else {
            vec![idx.len()]
        };
        let t = Tensor::new(shape, data)?;
        self.push("gather", t, Op::Gather(a, idx.to_vec()), &[a])
    }

    /// Scatter-add of rows into `rows` output rows: `out[idx[i]] += a[i]`.
    pub fn scatter_add(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let ta = &self.check(a)?.value;
        if ta.shape().is_empty() || ta.rows() != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(mismatch("scatter_add", &[ta.shape(), &[idx.len(), rows]]));
        }
        let d = ta.cols();
        let mut data = vec![0.0; rows * d];
        for (src, &dst) in idx.iter().enumerate() {
            for j in 0..d {
                data[dst * d + j] += ta.data()[src * d + j];
            }
        }
        let shape = if ta.shape().len() == 2 {
            vec![rows, d]
        } else {
            vec![rows]
        };
        let t = Tensor::new(shape, data)?;
        self.push("scatter_add", t, Op::ScatterAdd(a, idx.to_vec()), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = &self.check(a)?.value;
        let t = Tensor::new(shape.to_vec(), ta.data().to_vec())
            .map_err(|_| mismatch("reshape", &[ta.shape(), shape]))?;
        self.push("reshape", t, Op::Reshape(a), &[a])
    }

    /// Reverse pass from a scalar output. Returns gradients for every leaf
    /// recorded with `requires_grad`; leaves that do not feed the output get
    /// exact zeros.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.check(output)?;
        if out.value.len() != 1 || out.value.shape().iter().any(|&d| d != 1) {
            return Err(Error::NotScalar(out.value.shape().to_vec()));
        }
        let n = output.index + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[output.index] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut leaves = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let g = if i < n { grads[i].take() } else { None };
                let g = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                leaves.push((i, g));
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: &Var| &self.nodes[v.index].value;
        let wants = |v: &Var| self.nodes[v.index].needs_grad;
        let mut acc = |v: &Var, contrib: Vec<f64>| {
            if !self.nodes[v.index].needs_grad {
                return;
            }
            match &mut grads[v.index] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(a) {
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * tb.data()[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    acc(a, da);
                }
                if wants(b) {
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    acc(b, db);
                }
            }
            Op::Add(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                acc(a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                acc(b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, bias) => {
                acc(a, g.to_vec());
                let d = val(bias).len();
                let mut db = vec![0.0; d];
                for (i, x) in g.iter().enumerate() {
                    db[i % d] += x;
                }
                acc(bias, db);
            }
            Op::MulRows(a, w) => {
                let (ta, tw) = (val(a), val(w));
                let d = ta.cols();
                acc(
                    a,
                    g.iter()
                        .enumerate()
                        .map(|(i, x)| x * tw.data()[i / d])
                        .collect(),
                );
                let mut dw = vec![0.0; tw.len()];
                for (i, x) in g.iter().enumerate() {
                    dw[i / d] += x * ta.data()[i];
                }
                acc(w, dw);
            }
            Op::Affine(a, s) => acc(a, g.iter().map(|x| x * s).collect()),
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|v| *val(v).shape().last().unwrap_or(&1))
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len().checked_div(total).unwrap_or(0);
                let mut offset = 0;
                for (v, &w) in parts.iter().zip(&widths) {
                    let mut dv = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dv.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc(v, dv);
                    offset += w;
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(a, g.iter().zip(y).map(|(x, s)| x * s * (1.0 - s)).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(a, g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)).collect());
            }
            Op::Ln(a) => {
                let xs = val(a).data();
                acc(
                    a,
                    g.iter()
                        .zip(xs)
                        .map(|(gi, &x)| {
                            if (PROB_EPS..=1.0 - PROB_EPS).contains(&x) {
                                gi / x
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                );
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let shape = node.value.shape();
                let d = shape[shape.len() - 1];
                let mut dx = vec![0.0; y.len()];
                if d > 0 {
                    for start in (0..y.len()).step_by(d) {
                        softmax_backward(
                            &y[start..start + d],
                            &g[start..start + d],
                            &mut dx[start..start + d],
                        );
                    }
                }
                acc(a, dx);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    softmax_backward(&y[w[0]..w[1]], &g[w[0]..w[1]], &mut dx[w[0]..w[1]]);
                }
                acc(a, dx);
            }
            Op::L1(a) => {
                let xs = val(a).data();
                acc(a, xs.iter().map(|x| g[0] * sign(*x)).collect());
            }
            Op::Sum(a) => acc(a, vec![g[0]; val(a).len()]),
            Op::Mean(a) => {
                let n = val(a).len();
                acc(a, vec![g[0] / n as f64; n]);
            }
            Op::Mask(a, mask) => acc(a, g.iter().zip(mask).map(|(x, m)| x * m).collect()),
            Op::Gather(a, idx) => {
                let ta = val(a);
                let d = ta.cols();
                let mut da = vec![0.0; ta.len()];
                for (src, &row) in idx.iter().enumerate() {
                    for j in 0..d {
                        da[row * d + j] += g[src * d + j];
                    }
                }
                acc(a, da);
            }
            Op::ScatterAdd(a, idx) => {
                let ta = val(a);
                let d = ta.cols();
                let mut da = Vec::with_capacity(ta.len());
                for &row in idx {
                    da.extend_from_slice(&g[row * d..(row + 1) * d]);
                }
                acc(a, da);
            }
            Op::Reshape(a) => acc(a, g.to_vec()),
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for i in 0..y.len() {
        dx[i] = y[i] * (g[i] - dot);
    }
}

/// Plain row-major matrix product used by the tape and by inference code.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += av * brow[j];
            }
        }
    }
    out
}

/// Gradients returned by [`Tape::backward`], one per `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    leaves: Vec<(usize, Vec<f64>)>,
}

impl Gradients {
    /// Gradient for a leaf, or `None` if `v` is not a `requires_grad` leaf of
    /// the tape that produced these gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.leaves
            .binary_search_by_key(&v.index, |(i, _)| *i)
            .ok()
            .map(|pos| self.leaves[pos].1.as_slice())
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn param(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap().with_grad())
            .unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half_with_quarter_slope() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[], vec![0.0]);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.25]);
    }

    #[test]
    fn softmax_of_single_element_is_one() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[1], vec![3.7]);
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0]);
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let i3 = tape.constant(Tensor::matrix(3, 3, eye).unwrap()).unwrap();
        let av = tape
            .constant(Tensor::matrix(3, 3, a.clone()).unwrap())
            .unwrap();
        let out = tape.matmul(i3, av).unwrap();
        assert_eq!(tape.value(out).data(), a.as_slice());
    }

    #[test]
    fn l1_gradient_on_positive_vector_is_all_ones() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[4], vec![0.5, 1.0, 2.0, 3.0]);
        let y = tape.l1_norm(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn shape_mismatch_names_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        match err {
            Error::ShapeMismatch { op, shapes } => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected error {other:?}"),
        }
        let s = tape_scalar(&mut tape);
        assert!(matches!(
            tape.add(a, s),
            Err(Error::ShapeMismatch { op: "add", .. })
        ));
    }

    fn tape_scalar(tape: &mut Tape) -> Var {
        tape.constant(Tensor::scalar(1.0)).unwrap()
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_vars() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[2], vec![1.0, 2.0]);
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));

        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0).with_grad()).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NotOnTape(_))));
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[2], vec![1.0, 2.0]);
        let unused = param(&mut tape, &[3], vec![1.0, 2.0, 3.0]);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = param(&mut tape, &[5], vec![1.0, -2.0, 3.0, 0.5, 4.0]);
        let y = tape.dropout(x, 0.0, Some(&mut rng)).unwrap();
        assert_eq!(y, x);
        let z = tape.dropout::<ChaCha8Rng>(x, 0.7, None).unwrap();
        assert_eq!(z, x);
        let w = tape.dropout(x, 0.5, Some(&mut rng)).unwrap();
        for (out, inp) in tape.value(w).data().iter().zip(tape.value(x).data()) {
            assert!(*out == 0.0 || *out == 2.0 * inp);
        }
    }

    #[test]
    fn ln_clamps_argument() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[2], vec![0.0, 1.0]);
        let y = tape.ln(x).unwrap();
        assert_eq!(tape.value(y).data()[0], PROB_EPS.ln());
        assert_eq!(tape.value(y).data()[1], (1.0 - PROB_EPS).ln());
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut tape = Tape::new();
        let x = param(&mut tape, &[5], vec![0.1, 2.0, -1.0, 5.0, 0.3]);
        let y = tape.segment_softmax(x, &[0, 2, 2, 5]).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] + v[3] + v[4] - 1.0).abs() < 1e-15);
    }
}
