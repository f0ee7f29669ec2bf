//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records primitive applications during the forward pass; each
//! recorded node caches its forward value. [`Tape::backward`] replays the
//! tape once in reverse, accumulating gradients additively across fan-out,
//! and returns gradients for every node (parameters included).
//!
//! The primitive set is the closure needed by the models in this crate:
//! dense layers, the tiny CNN, the loss-prediction head and the
//! bidirectional gated recurrent sorter.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add,
    /// [r, c] + [1, c], bias broadcast across rows.
    AddBias,
    Sub,
    Mul,
    /// a * x + b with scalar constants.
    Affine { a: f64 },
    Matmul,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
    /// Row-wise softmax of a 2-D tensor.
    Softmax,
    /// Natural log with inputs clamped at 1e-12.
    Log,
    /// Full reduction to a [1, 1] scalar.
    Mean,
    Sum,
    /// Column-wise concatenation of 2-D tensors with equal row counts.
    ConcatCols { widths: Vec<usize> },
    SliceCols { start: usize, len: usize },
    /// Same data, new extents (row-major order preserved).
    Reshape,
    /// Row-wise (x - min) / (max - min); constant rows map to 0.5.
    MinMaxNormRows,
    /// inputs: x [n,c,h,w], kernel [o,c,kh,kw], bias [1,o]; stride 1.
    Conv2d { pad: usize },
    /// [n, c, h, w] -> [n, c] spatial mean.
    GlobalAvgPool,
    /// (pred - target)^2 elementwise; per-sample when operands are [n, 1].
    SquaredError,
    /// Per-sample cross-entropy from logits [n, classes] -> [n, 1].
    CrossEntropy { labels: Vec<usize> },
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one reverse sweep.
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the seed with respect to the tensor at `v`,
    /// zero-filled when the node does not influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.by_node[v.0] {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).unwrap(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    /// Gradients for every parameter leaf on the tape, tape order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Tensor)> + '_ {
        self.params.iter().map(|&(id, node)| {
            let t = match &self.by_node[node] {
                Some(g) => Tensor::new(self.shapes[node].clone(), g.clone()).unwrap(),
                None => Tensor::zeros(self.shapes[node].clone()),
            };
            (id, t)
        })
    }

    /// Writes parameter gradients into their store slots (replacing,
    /// accumulating across duplicate leaves of the same parameter).
    pub fn write_to(&self, store: &mut ParamStore) -> Result<()> {
        let mut fresh: Vec<bool> = vec![false; store.len()];
        for (id, g) in self.params() {
            if fresh[id.index()] {
                let mut acc = store.grad(id).clone();
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
                store.set_grad(id, acc)?;
            } else {
                store.set_grad(id, g)?;
                fresh[id.index()] = true;
            }
        }
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone()).unwrap()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, shape: Vec<usize>, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, inputs, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(Op::Input, vec![], t.shape().to_vec(), t.data().to_vec())
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.push(Op::Input, vec![], vec![1, 1], vec![v])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.value(id);
        self.push(Op::Param(id), vec![], t.shape().to_vec(), t.data().to_vec())
    }

    fn shaped2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch { op, detail: format!("expected 2-D tensor, got {s:?}") });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::ShapeMismatch { op, detail: format!("{sa:?} vs {sb:?}") });
        }
        Ok(sa.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add, vec![a.0, b.0], shape, value))
    }

    /// x [r, c] plus bias [1, c] broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shaped2(x, "add-bias")?;
        let (br, bc) = self.shaped2(bias, "add-bias")?;
        if br != 1 || bc != c {
            return Err(Error::ShapeMismatch {
                op: "add-bias",
                detail: format!("bias [{br}, {bc}] does not broadcast over [{r}, {c}]"),
            });
        }
        let mut value = self.nodes[x.0].value.clone();
        let bv = &self.nodes[bias.0].value;
        for row in value.chunks_exact_mut(c) {
            for (o, b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddBias, vec![x.0, bias.0], vec![r, c], value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub, vec![a.0, b.0], shape, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "mul")?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul, vec![a.0, b.0], shape, value))
    }

    /// a * x + b elementwise with scalar constants.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| a * v + b).collect();
        self.push(Op::Affine { a }, vec![x.0], shape, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shaped2(a, "matmul")?;
        let (k2, n) = self.shaped2(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m}, {k}] x [{k2}, {n}]"),
            });
        }
        let mut value = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for i in 0..m {
                let out_row = &mut value[i * n..(i + 1) * n];
                for kk in 0..k {
                    let aik = av[i * k + kk];
                    if aik == 0.0 {
                        continue;
                    }
                    let b_row = &bv[kk * n..(kk + 1) * n];
                    for (o, bj) in out_row.iter_mut().zip(b_row) {
                        *o += aik * bj;
                    }
                }
            }
        }
        Ok(self.push(Op::Matmul, vec![a.0, b.0], vec![m, n], value))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value: Vec<f64> =
            self.nodes[x.0].value.iter().map(|&v| if v > 0.0 { v } else { alpha * v }).collect();
        self.push(Op::LeakyRelu { alpha }, vec![x.0], shape, value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        self.push(Op::Sigmoid, vec![x.0], shape, value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh, vec![x.0], shape, value)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shaped2(x, "softmax")?;
        let mut value = self.nodes[x.0].value.clone();
        for row in value.chunks_exact_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.push(Op::Softmax, vec![x.0], vec![r, c], value))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| v.max(1e-12).ln()).collect();
        self.push(Op::Log, vec![x.0], shape, value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let v = self.nodes[x.0].value.iter().sum::<f64>() / n;
        self.push(Op::Mean, vec![x.0], vec![1, 1], vec![v])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().sum::<f64>();
        self.push(Op::Sum, vec![x.0], vec![1, 1], vec![v])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (r, _) = self.shaped2(parts[0], "concat-cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (pr, pc) = self.shaped2(p, "concat-cols")?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat-cols",
                    detail: format!("row counts differ: {r} vs {pr}"),
                });
            }
            widths.push(pc);
            total += pc;
        }
        let mut value = vec![0.0; r * total];
        let mut offset = 0usize;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = &self.nodes[p.0].value;
            for i in 0..r {
                value[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            Op::ConcatCols { widths },
            parts.iter().map(|p| p.0).collect(),
            vec![r, total],
            value,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shaped2(x, "slice-cols")?;
        if start + len > c || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice-cols",
                detail: format!("columns {start}..{} of [{r}, {c}]", start + len),
            });
        }
        let xv = &self.nodes[x.0].value;
        let mut value = Vec::with_capacity(r * len);
        for i in 0..r {
            value.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Op::SliceCols { start, len }, vec![x.0], vec![r, len], value))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[x.0].value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.nodes[x.0].shape),
            });
        }
        let value = self.nodes[x.0].value.clone();
        Ok(self.push(Op::Reshape, vec![x.0], shape, value))
    }

    /// Row-wise min-max normalization to [0, 1]. Constant rows map to 0.5
    /// with zero gradient.
    pub fn minmax_norm_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shaped2(x, "minmax-norm")?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut value[i * c..(i + 1) * c];
            if hi - lo < 1e-300 {
                out.fill(0.5);
            } else {
                let inv = 1.0 / (hi - lo);
                for (o, v) in out.iter_mut().zip(row) {
                    *o = (v - lo) * inv;
                }
            }
        }
        Ok(self.push(Op::MinMaxNormRows, vec![x.0], vec![r, c], value))
    }

    /// Stride-1 2-D convolution with zero padding and per-channel bias.
    /// x: [n, c, h, w], kernel: [o, c, kh, kw], bias: [1, o].
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, pad: usize) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let ks = self.nodes[kernel.0].shape.clone();
        let bs = self.nodes[bias.0].shape.clone();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {xs:?}, kernel {ks:?}; both must be 4-D"),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel expects {kc} channels, input has {c}"),
            });
        }
        if bs != vec![1, oc] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias {bs:?} for {oc} output channels"),
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} exceeds padded input {h}x{w} (pad {pad})"),
            });
        }
        let oh = h + 2 * pad - kh + 1;
        let ow = w + 2 * pad - kw + 1;
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut value = vec![0.0; n * oc * oh * ow];
        for ni in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bv[o];
                        for ci in 0..c {
                            for ky in 0..kh {
                                let iy = oy + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox + kx;
                                    if ix < pad || ix - pad >= w {
                                        continue;
                                    }
                                    acc += xv[((ni * c + ci) * h + (iy - pad)) * w + (ix - pad)]
                                        * kv[((o * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        value[((ni * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv2d { pad },
            vec![x.0, kernel.0, bias.0],
            vec![n, oc, oh, ow],
            value,
        ))
    }

    /// [n, c, h, w] -> [n, c] spatial mean per channel.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        if xs.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "global-avg-pool",
                detail: format!("expected 4-D tensor, got {xs:?}"),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let hw = (h * w) as f64;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; n * c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                value[ni * c + ci] = xv[base..base + h * w].iter().sum::<f64>() / hw;
            }
        }
        Ok(self.push(Op::GlobalAvgPool, vec![x.0], vec![n, c], value))
    }

    /// (pred - target)^2 elementwise; per-sample losses when both are [n, 1].
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        let shape = self.same_shape(pred, target, "squared-error")?;
        let value: Vec<f64> = self.nodes[pred.0]
            .value
            .iter()
            .zip(&self.nodes[target.0].value)
            .map(|(p, t)| (p - t) * (p - t))
            .collect();
        Ok(self.push(Op::SquaredError, vec![pred.0, target.0], shape, value))
    }

    /// Per-sample cross-entropy from logits, stabilized by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.shaped2(logits, "cross-entropy")?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross-entropy",
                detail: format!("{n} rows of logits, {} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let xv = &self.nodes[logits.0].value;
        let mut value = Vec::with_capacity(n);
        for (i, &y) in labels.iter().enumerate() {
            let row = &xv[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            value.push(lse - row[y]);
        }
        Ok(self.push(
            Op::CrossEntropy { labels: labels.to_vec() },
            vec![logits.0],
            vec![n, 1],
            value,
        ))
    }

    /// Reverse sweep from a scalar seed. Gradients accumulate additively
    /// across fan-out; each node is visited exactly once.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        if seed.0 >= self.nodes.len() || self.nodes[seed.0].value.len() != 1 {
            return Err(Error::BadSeed);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(vec![1.0]);

        for i in (0..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params = Vec::new();
        let mut shapes = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                params.push((id, idx));
            }
            shapes.push(node.shape.clone());
        }
        Ok(Gradients { by_node: grads, params, shapes })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Vec<f64>>], target: usize, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[target]
                .get_or_insert_with(|| vec![0.0; self.nodes[target].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add => {
                for &inp in &node.inputs {
                    acc(grads, inp, &mut |d| {
                        for (o, gi) in d.iter_mut().zip(g) {
                            *o += gi;
                        }
                    });
                }
            }
            Op::AddBias => {
                let c = node.shape[1];
                acc(grads, node.inputs[0], &mut |d| {
                    for (o, gi) in d.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                acc(grads, node.inputs[1], &mut |d| {
                    for row in g.chunks_exact(c) {
                        for (o, gi) in d.iter_mut().zip(row) {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Sub => {
                acc(grads, node.inputs[0], &mut |d| {
                    for (o, gi) in d.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
                acc(grads, node.inputs[1], &mut |d| {
                    for (o, gi) in d.iter_mut().zip(g) {
                        *o -= gi;
                    }
                });
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let bv = &self.nodes[b].value;
                acc(grads, a, &mut |d| {
                    for ((o, gi), bi) in d.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                let av = &self.nodes[a].value;
                acc(grads, b, &mut |d| {
                    for ((o, gi), ai) in d.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Affine { a } => {
                let a = *a;
                acc(grads, node.inputs[0], &mut |d| {
                    for (o, gi) in d.iter_mut().zip(g) {
                        *o += a * gi;
                    }
                });
            }
            Op::Matmul => {
                let (ai, bi) = (node.inputs[0], node.inputs[1]);
                let m = self.nodes[ai].shape[0];
                let k = self.nodes[ai].shape[1];
                let n = node.shape[1];
                let bv = &self.nodes[bi].value;
                // dA[i][kk] = dot(g_row_i, b_row_kk)
                acc(grads, ai, &mut |d| {
                    for i2 in 0..m {
                        let g_row = &g[i2 * n..(i2 + 1) * n];
                        let d_row = &mut d[i2 * k..(i2 + 1) * k];
                        for kk in 0..k {
                            let b_row = &bv[kk * n..(kk + 1) * n];
                            let mut s = 0.0;
                            for (gj, bj) in g_row.iter().zip(b_row) {
                                s += gj * bj;
                            }
                            d_row[kk] += s;
                        }
                    }
                });
                let av = &self.nodes[ai].value;
                // dB[kk] += a[i][kk] * g_row_i
                acc(grads, bi, &mut |d| {
                    for i2 in 0..m {
                        let g_row = &g[i2 * n..(i2 + 1) * n];
                        for kk in 0..k {
                            let aik = av[i2 * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let d_row = &mut d[kk * n..(kk + 1) * n];
                            for (o, gj) in d_row.iter_mut().zip(g_row) {
                                *o += aik * gj;
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { alpha } => {
                let alpha = *alpha;
                let xv = &self.nodes[node.inputs[0]].value;
                acc(grads, node.inputs[0], &mut |d| {
                    for ((o, gi), xi) in d.iter_mut().zip(g).zip(xv) {
                        *o += gi * if *xi > 0.0 { 1.0 } else { alpha };
                    }
                });
            }
            Op::Sigmoid => {
                let sv = &node.value;
                acc(grads, node.inputs[0], &mut |d| {
                    for ((o, gi), si) in d.iter_mut().zip(g).zip(sv) {
                        *o += gi * si * (1.0 - si);
                    }
                });
            }
            Op::Tanh => {
                let tv = &node.value;
                acc(grads, node.inputs[0], &mut |d| {
                    for ((o, gi), ti) in d.iter_mut().zip(g).zip(tv) {
                        *o += gi * (1.0 - ti * ti);
                    }
                });
            }
            Op::Softmax => {
                let c = node.shape[1];
                let pv = &node.value;
                acc(grads, node.inputs[0], &mut |d| {
                    for r in 0..node.shape[0] {
                        let p = &pv[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                        let dr = &mut d[r * c..(r + 1) * c];
                        for ((o, pi), gi) in dr.iter_mut().zip(p).zip(gr) {
                            *o += pi * (gi - dot);
                        }
                    }
                });
            }
            Op::Log => {
                let xv = &self.nodes[node.inputs[0]].value;
                acc(grads, node.inputs[0], &mut |d| {
                    for ((o, gi), xi) in d.iter_mut().zip(g).zip(xv) {
                        if *xi >= 1e-12 {
                            *o += gi / xi;
                        }
                    }
                });
            }
            Op::Mean => {
                let n = self.nodes[node.inputs[0]].value.len() as f64;
                let gv = g[0] / n;
                acc(grads, node.inputs[0], &mut |d| {
                    for o in d.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::Sum => {
                let gv = g[0];
                acc(grads, node.inputs[0], &mut |d| {
                    for o in d.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::ConcatCols { widths } => {
                let r = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0usize;
                for (&inp, &w) in node.inputs.iter().zip(widths) {
                    acc(grads, inp, &mut |d| {
                        for i2 in 0..r {
                            let src = &g[i2 * total + offset..i2 * total + offset + w];
                            let dst = &mut d[i2 * w..(i2 + 1) * w];
                            for (o, gi) in dst.iter_mut().zip(src) {
                                *o += gi;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { start, len } => {
                let inp = node.inputs[0];
                let c = self.nodes[inp].shape[1];
                let r = node.shape[0];
                let (start, len) = (*start, *len);
                acc(grads, inp, &mut |d| {
                    for i2 in 0..r {
                        let src = &g[i2 * len..(i2 + 1) * len];
                        let dst = &mut d[i2 * c + start..i2 * c + start + len];
                        for (o, gi) in dst.iter_mut().zip(src) {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Reshape => {
                acc(grads, node.inputs[0], &mut |d| {
                    for (o, gi) in d.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
            Op::MinMaxNormRows => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let xv = &self.nodes[node.inputs[0]].value;
                let vv = &node.value;
                acc(grads, node.inputs[0], &mut |d| {
                    for i2 in 0..r {
                        let row = &xv[i2 * c..(i2 + 1) * c];
                        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        if hi - lo < 1e-300 {
                            continue;
                        }
                        let inv = 1.0 / (hi - lo);
                        let arg_min = row.iter().position(|&v| v == lo).unwrap();
                        let arg_max = row.iter().position(|&v| v == hi).unwrap();
                        let gr = &g[i2 * c..(i2 + 1) * c];
                        let vr = &vv[i2 * c..(i2 + 1) * c];
                        let s: f64 = gr.iter().sum();
                        let t: f64 = gr.iter().zip(vr).map(|(gi, vi)| gi * vi).sum();
                        let dr = &mut d[i2 * c..(i2 + 1) * c];
                        for (j, (o, gi)) in dr.iter_mut().zip(gr).enumerate() {
                            let mut v = *gi;
                            if j == arg_min {
                                v -= s - t;
                            }
                            if j == arg_max {
                                v -= t;
                            }
                            *o += v * inv;
                        }
                    }
                });
            }
            Op::Conv2d { pad } => {
                let pad = *pad;
                let (xi, ki, bi) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = &self.nodes[xi].shape;
                let ks = &self.nodes[ki].shape;
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (oc, _, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let kv = &self.nodes[ki].value;
                acc(grads, xi, &mut |d| {
                    for ni in 0..n {
                        for o in 0..oc {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[((ni * oc + o) * oh + oy) * ow + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..c {
                                        for ky in 0..kh {
                                            let iy = oy + ky;
                                            if iy < pad || iy - pad >= h {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = ox + kx;
                                                if ix < pad || ix - pad >= w {
                                                    continue;
                                                }
                                                d[((ni * c + ci) * h + (iy - pad)) * w
                                                    + (ix - pad)] += gv
                                                    * kv[((o * c + ci) * kh + ky) * kw + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                let xv = &self.nodes[xi].value;
                acc(grads, ki, &mut |d| {
                    for ni in 0..n {
                        for o in 0..oc {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = g[((ni * oc + o) * oh + oy) * ow + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..c {
                                        for ky in 0..kh {
                                            let iy = oy + ky;
                                            if iy < pad || iy - pad >= h {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = ox + kx;
                                                if ix < pad || ix - pad >= w {
                                                    continue;
                                                }
                                                d[((o * c + ci) * kh + ky) * kw + kx] += gv
                                                    * xv[((ni * c + ci) * h + (iy - pad)) * w
                                                        + (ix - pad)];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                acc(grads, bi, &mut |d| {
                    for ni in 0..n {
                        for o in 0..oc {
                            let base = ((ni * oc + o) * oh) * ow;
                            d[o] += g[base..base + oh * ow].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::GlobalAvgPool => {
                let xs = &self.nodes[node.inputs[0]].shape;
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let inv = 1.0 / (h * w) as f64;
                acc(grads, node.inputs[0], &mut |d| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let gv = g[ni * c + ci] * inv;
                            let base = (ni * c + ci) * h * w;
                            for o in &mut d[base..base + h * w] {
                                *o += gv;
                            }
                        }
                    }
                });
            }
            Op::SquaredError => {
                let (pi, ti) = (node.inputs[0], node.inputs[1]);
                let pv = &self.nodes[pi].value;
                let tv = &self.nodes[ti].value;
                acc(grads, pi, &mut |d| {
                    for (((o, gi), p), t) in d.iter_mut().zip(g).zip(pv).zip(tv) {
                        *o += gi * 2.0 * (p - t);
                    }
                });
                acc(grads, ti, &mut |d| {
                    for (((o, gi), p), t) in d.iter_mut().zip(g).zip(pv).zip(tv) {
                        *o -= gi * 2.0 * (p - t);
                    }
                });
            }
            Op::CrossEntropy { labels } => {
                let li = node.inputs[0];
                let c = self.nodes[li].shape[1];
                let xv = &self.nodes[li].value;
                acc(grads, li, &mut |d| {
                    for (i2, &y) in labels.iter().enumerate() {
                        let row = &xv[i2 * c..(i2 + 1) * c];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                        let gi = g[i2];
                        let dr = &mut d[i2 * c..(i2 + 1) * c];
                        for (j, (o, v)) in dr.iter_mut().zip(row).enumerate() {
                            let p = (v - m).exp() / z;
                            *o += gi * (p - if j == y { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_input(tape: &mut Tape, v: f64) -> Var {
        tape.input(&Tensor::scalar(v))
    }

    #[test]
    fn square_forward_and_grad() {
        let mut tape = Tape::new();
        let x = scalar_input(&mut tape, 3.0);
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.scalar_value(y), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn leaky_relu_at_negative_two() {
        let mut tape = Tape::new();
        let x = scalar_input(&mut tape, -2.0);
        let y = tape.leaky_relu(x, 0.01);
        assert!((tape.scalar_value(y) - (-0.02)).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::row(&[0.0, 0.0, 0.0, 0.0]));
        let p = tape.softmax(x).unwrap();
        for &v in tape.value(p) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn fan_out_mean_grad_is_one() {
        // f(x) = mean([x, x]) => df/dx = 1/2 + 1/2 = 1
        let mut tape = Tape::new();
        let x = scalar_input(&mut tape, 1.0);
        let both = tape.concat_cols(&[x, x]).unwrap();
        let m = tape.mean(both);
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0]);
    }

    #[test]
    fn matmul_shapes_and_values() {
        let mut tape = Tape::new();
        let a = tape.input(&Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.input(&Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 2]);
        assert_eq!(tape.value(c), &[58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dim() {
        let mut tape = Tape::new();
        let a = tape.input(&Tensor::zeros(vec![2, 3]));
        let b = tape.input(&Tensor::zeros(vec![2, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn cross_entropy_uniform_is_log_c() {
        let mut tape = Tape::new();
        let logits = tape.input(&Tensor::zeros(vec![1, 10]));
        let ce = tape.cross_entropy(logits, &[3]).unwrap();
        assert!((tape.value(ce)[0] - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let logits = tape.input(&Tensor::zeros(vec![1, 3]));
        assert!(tape.cross_entropy(logits, &[3]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_seed() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::BadSeed)));
    }

    #[test]
    fn minmax_norm_maps_to_unit_interval() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::row(&[2.0, 6.0, 4.0]));
        let v = tape.minmax_norm_rows(x).unwrap();
        assert_eq!(tape.value(v), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn minmax_norm_constant_row_is_half() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::row(&[3.0, 3.0, 3.0]));
        let v = tape.minmax_norm_rows(x).unwrap();
        assert_eq!(tape.value(v), &[0.5, 0.5, 0.5]);
        let s = tape.sum(v);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_pool_of_2x2_map() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let p = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(p), &[2.5]);
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let a = tape.slice_cols(x, 0, 1).unwrap();
        let b = tape.slice_cols(x, 1, 2).unwrap();
        let back = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
    }

    #[test]
    fn identical_builds_are_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.input(&Tensor::row(&[0.3, -0.7, 1.9]));
            let s = tape.sigmoid(x);
            let t = tape.tanh(s);
            let m = tape.mean(t);
            let grads = tape.backward(m).unwrap();
            (tape.value(m).to_vec(), grads.wrt(x).data().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v1), bits(&v2));
        assert_eq!(bits(&g1), bits(&g2));
    }
}
