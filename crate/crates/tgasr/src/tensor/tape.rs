//! The gradient tape: a topologically ordered record of every operation in a
//! forward pass, with enough captured state to run exact reverse-mode
//! adjoints.
//!
//! One tape = one forward/backward pass. Parameters live outside the tape in
//! a [`ParamSet`](super::ParamSet); a pass binds them as leaves, runs ops,
//! calls [`Tape::backward`] on a scalar loss, and reads gradients back out.

use crate::error::{Result, TgError};

use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    ScaleByScalar {
        x: NodeId,
        s: NodeId,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Gelu {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<NodeId>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
    },
    MeanRows {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    SumAll {
        x: NodeId,
    },
    CrossEntropySum {
        logits: NodeId,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires: bool,
    op: Op,
}

/// Reverse-mode gradient tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// a[m×k] · b[n×k]ᵀ -> [m×n]
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// a[k×m]ᵀ · b[k×n] -> [m×n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let aip = arow[i];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

fn softmax_slices(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| o * axis_len * inner + a * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for a in 0..axis_len {
                mx = mx.max(data[idx(a)]);
            }
            let mut sum = 0.0;
            for a in 0..axis_len {
                let e = (data[idx(a)] - mx).exp();
                out[idx(a)] = e;
                sum += e;
            }
            for a in 0..axis_len {
                out[idx(a)] /= sum;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the loss w.r.t. this node, if backward reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Bind a differentiable leaf (a trainable parameter).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, true, Op::Leaf)
    }

    /// Bind a non-differentiable leaf (input data, frozen features, masks).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, false, Op::Leaf)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TgError::Dim(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(t, self.req(a) || self.req(b), Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(t, self.req(a) || self.req(b), Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(t, self.req(a) || self.req(b), Op::Mul { a, b }))
    }

    /// Add a length-c bias vector to every row of x.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let cols = self.val(x).cols();
        if self.val(bias).numel() != cols {
            return Err(TgError::Dim(format!(
                "add_bias: x cols {cols} vs bias {:?}",
                self.shape(bias)
            )));
        }
        let rows = self.val(x).rows();
        let xv = self.val(x).data();
        let bv = self.val(bias).data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] = xv[r * cols + c] + bv[c];
            }
        }
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(t, self.req(x) || self.req(bias), Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.val(x).data().iter().map(|v| v * c).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        self.push(t, self.req(x), Op::Scale { x, c })
    }

    /// Multiply every element of x by the scalar node s (shape [1]).
    pub fn scale_by_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.val(s).numel() != 1 {
            return Err(TgError::Dim(format!(
                "scale_by_scalar: scalar operand has shape {:?}",
                self.shape(s)
            )));
        }
        let sv = self.val(s).data()[0];
        let data = self.val(x).data().iter().map(|v| v * sv).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(t, self.req(x) || self.req(s), Op::ScaleByScalar { x, s }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TgError::Dim(format!("matmul: {sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_nn(self.val(a).data(), self.val(b).data(), m, k, n);
        let t = Tensor {
            shape: vec![m, n],
            data,
        };
        Ok(self.push(t, self.req(a) || self.req(b), Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TgError::Dim(format!("transpose needs 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xv = self.val(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xv[i * c + j];
            }
        }
        let t = Tensor {
            shape: vec![c, r],
            data,
        };
        Ok(self.push(t, self.req(x), Op::Transpose { x }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.val(x).data().iter().map(|v| v.tanh()).collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        self.push(t, self.req(x), Op::Tanh { x })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let data = self
            .val(x)
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        self.push(t, self.req(x), Op::Gelu { x })
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TgError::Dim(format!(
                "softmax: axis {axis} out of range for {s:?}"
            )));
        }
        let data = softmax_slices(self.val(x).data(), &s, axis);
        let t = Tensor { shape: s, data };
        Ok(self.push(t, self.req(x), Op::Softmax { x, axis }))
    }

    /// Per-row normalization over the last axis, then affine with gamma/beta.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let d = self.val(x).cols();
        if self.val(gamma).numel() != d || self.val(beta).numel() != d {
            return Err(TgError::Dim(format!(
                "layer_norm: x last dim {d}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let rows = self.val(x).rows();
        let xv = self.val(x).data();
        let gv = self.val(gamma).data();
        let bv = self.val(beta).data();
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                data[r * d + c] = (row[c] - mean) * inv * gv[c] + bv[c];
            }
        }
        let t = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        let requires = self.req(x) || self.req(gamma) || self.req(beta);
        Ok(self.push(
            t,
            requires,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
        ))
    }

    /// Gather rows of a 2-D table: out[r] = table[ids[r]].
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(TgError::Dim(format!("gather_rows: table {s:?} not 2-D")));
        }
        let (n, d) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(TgError::Dim("gather_rows: empty index list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(TgError::Invalid(format!(
                "gather_rows: index {bad} out of range for table with {n} rows"
            )));
        }
        let tv = self.val(table).data();
        let mut data = vec![0.0; ids.len() * d];
        for (r, &i) in ids.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let t = Tensor {
            shape: vec![ids.len(), d],
            data,
        };
        Ok(self.push(
            t,
            self.req(table),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Concatenate 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TgError::Dim("concat_cols: no parts".into()));
        }
        let rows = self.val(parts[0]).shape()[0];
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(TgError::Dim(format!(
                    "concat_cols: part {s:?} incompatible with {rows} rows"
                )));
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let c = self.shape(p)[1];
            let pv = self.val(p).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + c].copy_from_slice(&pv[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let requires = parts.iter().any(|&p| self.req(p));
        let t = Tensor {
            shape: vec![rows, total],
            data,
        };
        Ok(self.push(
            t,
            requires,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// 1-D convolution over the row (time) axis with zero "same" padding and
    /// stride 1. x: [T×F], w: [K, F, D], b: [D] -> [T×D]. K must be odd.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, kernel: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 3 || ws[0] != kernel || ws[1] != xs[1] {
            return Err(TgError::Dim(format!(
                "conv1d: x {xs:?}, w {ws:?}, kernel {kernel}"
            )));
        }
        if kernel.is_multiple_of(2) {
            return Err(TgError::Dim(format!("conv1d: kernel {kernel} must be odd")));
        }
        let (t_len, f) = (xs[0], xs[1]);
        let d = ws[2];
        if self.val(b).numel() != d {
            return Err(TgError::Dim(format!(
                "conv1d: bias {:?} vs out channels {d}",
                self.shape(b)
            )));
        }
        let pad = kernel / 2;
        let xv = self.val(x).data();
        let wv = self.val(w).data();
        let bv = self.val(b).data();
        let mut data = vec![0.0; t_len * d];
        for t in 0..t_len {
            let out_row = &mut data[t * d..(t + 1) * d];
            out_row.copy_from_slice(bv);
            for k in 0..kernel {
                let src = t as isize + k as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let x_row = &xv[src as usize * f..(src as usize + 1) * f];
                for (fi, &xval) in x_row.iter().enumerate() {
                    if xval == 0.0 {
                        continue;
                    }
                    let w_row = &wv[(k * f + fi) * d..(k * f + fi + 1) * d];
                    for (o, &wval) in w_row.iter().enumerate() {
                        out_row[o] += xval * wval;
                    }
                }
            }
        }
        let requires = self.req(x) || self.req(w) || self.req(b);
        let t = Tensor {
            shape: vec![t_len, d],
            data,
        };
        Ok(self.push(t, requires, Op::Conv1d { x, w, b, kernel }))
    }

    /// Mean over rows: [r×c] -> [1×c].
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TgError::Dim(format!("mean_rows needs 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xv = self.val(x).data();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += xv[i * c + j];
            }
        }
        for v in &mut data {
            *v /= r as f64;
        }
        let t = Tensor {
            shape: vec![1, c],
            data,
        };
        Ok(self.push(t, self.req(x), Op::MeanRows { x }))
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.val(x).numel() || shape.contains(&0) {
            return Err(TgError::Dim(format!(
                "reshape: {:?} -> {shape:?}",
                self.shape(x)
            )));
        }
        let t = Tensor {
            shape,
            data: self.val(x).data().to_vec(),
        };
        Ok(self.push(t, self.req(x), Op::Reshape { x }))
    }

    /// Sum of all elements -> scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.val(x).data().iter().sum();
        let t = Tensor {
            shape: vec![1],
            data: vec![s],
        };
        self.push(t, self.req(x), Op::SumAll { x })
    }

    /// Summed token-level negative log-likelihood:
    /// Σ_t (logsumexp(logits[t]) − logits[t][targets[t]]).
    ///
    /// Divide by the position count (see [`Tape::scale`]) for the mean loss.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.len() != 2 {
            return Err(TgError::Dim(format!("cross_entropy: logits {s:?} not 2-D")));
        }
        let (t_len, v) = (s[0], s[1]);
        if targets.len() != t_len {
            return Err(TgError::Dim(format!(
                "cross_entropy: {t_len} logit rows vs {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(TgError::Invalid(format!(
                "cross_entropy: target {bad} outside vocab {v}"
            )));
        }
        let lv = self.val(logits).data();
        let mut total = 0.0;
        for (t, &y) in targets.iter().enumerate() {
            let row = &lv[t * v..(t + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let t = Tensor {
            shape: vec![1],
            data: vec![total],
        };
        Ok(self.push(
            t,
            self.req(logits),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Clear all gradients and re-arm backward.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar loss node. Populates `grad` on every
    /// node that requires gradients (leaves included, even if disconnected).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(TgError::Graph(
                "backward called twice without reset_grads".into(),
            ));
        }
        if self.val(loss).numel() != 1 {
            return Err(TgError::Graph(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;

        for n in &mut self.nodes {
            if n.requires {
                n.grad = Some(vec![0.0; n.value.numel()]);
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] = 1.0;
        } else {
            // Loss does not depend on any differentiable leaf; nothing to do.
            return Ok(());
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.apply_adjoint(i, &op, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, contrib: &[f64]) {
        if let Some(g) = self.nodes[id.0].grad.as_mut() {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
    }

    fn accum_with<F: FnMut(&mut [f64])>(&mut self, id: NodeId, mut f: F) {
        if self.nodes[id.0].requires {
            if let Some(mut g) = self.nodes[id.0].grad.take() {
                f(&mut g);
                self.nodes[id.0].grad = Some(g);
            }
        }
    }

    fn apply_adjoint(&mut self, out_idx: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}

            Op::Add { a, b } => {
                self.accum(a, g);
                self.accum(b, g);
            }

            Op::Sub { a, b } => {
                self.accum(a, g);
                self.accum_with(b, |gb| {
                    for (x, &gv) in gb.iter_mut().zip(g) {
                        *x -= gv;
                    }
                });
            }

            Op::Mul { a, b } => {
                if self.req(a) {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.val(b).data())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    self.accum(a, &contrib);
                }
                if self.req(b) {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.val(a).data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    self.accum(b, &contrib);
                }
            }

            Op::AddBias { x, bias } => {
                self.accum(x, g);
                if self.req(bias) {
                    let cols = self.val(bias).numel();
                    let rows = g.len() / cols;
                    let mut contrib = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            contrib[c] += g[r * cols + c];
                        }
                    }
                    self.accum(bias, &contrib);
                }
            }

            Op::Scale { x, c } => {
                if self.req(x) {
                    let contrib: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                    self.accum(x, &contrib);
                }
            }

            Op::ScaleByScalar { x, s } => {
                let sv = self.val(s).data()[0];
                if self.req(x) {
                    let contrib: Vec<f64> = g.iter().map(|gv| gv * sv).collect();
                    self.accum(x, &contrib);
                }
                if self.req(s) {
                    let dot: f64 = g
                        .iter()
                        .zip(self.val(x).data())
                        .map(|(gv, xv)| gv * xv)
                        .sum();
                    self.accum(s, &[dot]);
                }
            }

            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.req(a) {
                    // dA = G · Bᵀ
                    let da = matmul_nt(g, self.val(b).data(), m, n, k);
                    self.accum(a, &da);
                }
                if self.req(b) {
                    // dB = Aᵀ · G
                    let db = matmul_tn(self.val(a).data(), g, k, m, n);
                    self.accum(b, &db);
                }
            }

            Op::Transpose { x } => {
                if self.req(x) {
                    let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                    let mut contrib = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            contrib[i * c + j] = g[j * r + i];
                        }
                    }
                    self.accum(x, &contrib);
                }
            }

            Op::Tanh { x } => {
                if self.req(x) {
                    let out = self.nodes[out_idx].value.data();
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(out)
                        .map(|(gv, t)| gv * (1.0 - t * t))
                        .collect();
                    self.accum(x, &contrib);
                }
            }

            Op::Gelu { x } => {
                if self.req(x) {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(self.val(x).data())
                        .map(|(gv, &v)| {
                            let inner = GELU_C * (v + GELU_A * v * v * v);
                            let t = inner.tanh();
                            let sech2 = 1.0 - t * t;
                            let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            gv * (0.5 * (1.0 + t) + 0.5 * v * sech2 * d_inner)
                        })
                        .collect();
                    self.accum(x, &contrib);
                }
            }

            Op::Softmax { x, axis } => {
                if self.req(x) {
                    let out = self.nodes[out_idx].value.data();
                    let shape = self.nodes[out_idx].value.shape();
                    let axis_len = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut contrib = vec![0.0; out.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| o * axis_len * inner + a * inner + i;
                            let mut dot = 0.0;
                            for a in 0..axis_len {
                                dot += g[idx(a)] * out[idx(a)];
                            }
                            for a in 0..axis_len {
                                contrib[idx(a)] = out[idx(a)] * (g[idx(a)] - dot);
                            }
                        }
                    }
                    self.accum(x, &contrib);
                }
            }

            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let d = self.val(x).cols();
                let rows = self.val(x).rows();
                let xv = self.val(x).data().to_vec();
                let gv = self.val(gamma).data().to_vec();

                if self.req(beta) {
                    let mut dbeta = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            dbeta[c] += g[r * d + c];
                        }
                    }
                    self.accum(beta, &dbeta);
                }

                let need_x = self.req(x);
                let need_gamma = self.req(gamma);
                if need_x || need_gamma {
                    let mut dx = vec![0.0; rows * d];
                    let mut dgamma = vec![0.0; d];
                    for r in 0..rows {
                        let row = &xv[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();

                        for c in 0..d {
                            dgamma[c] += grow[c] * xhat[c];
                        }
                        if need_x {
                            let dxhat: Vec<f64> = (0..d).map(|c| grow[c] * gv[c]).collect();
                            let sum_dxhat: f64 = dxhat.iter().sum();
                            let sum_dxhat_xhat: f64 =
                                dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                            let df = d as f64;
                            for c in 0..d {
                                dx[r * d + c] = inv / df
                                    * (df * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
                            }
                        }
                    }
                    if need_x {
                        self.accum(x, &dx);
                    }
                    if need_gamma {
                        self.accum(gamma, &dgamma);
                    }
                }
            }

            Op::Gather { table, ref ids } => {
                if self.req(table) {
                    let d = self.val(table).cols();
                    self.accum_with(table, |gt| {
                        for (r, &i) in ids.iter().enumerate() {
                            for c in 0..d {
                                gt[i * d + c] += g[r * d + c];
                            }
                        }
                    });
                }
            }

            Op::ConcatCols { ref parts } => {
                let rows = self.nodes[out_idx].value.shape()[0];
                let total = self.nodes[out_idx].value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.req(p) {
                        let mut contrib = vec![0.0; rows * c];
                        for r in 0..rows {
                            contrib[r * c..(r + 1) * c]
                                .copy_from_slice(&g[r * total + off..r * total + off + c]);
                        }
                        self.accum(p, &contrib);
                    }
                    off += c;
                }
            }

            Op::Conv1d { x, w, b, kernel } => {
                let (t_len, f) = (self.shape(x)[0], self.shape(x)[1]);
                let d = self.shape(w)[2];
                let pad = kernel / 2;
                if self.req(b) {
                    let mut db = vec![0.0; d];
                    for t in 0..t_len {
                        for o in 0..d {
                            db[o] += g[t * d + o];
                        }
                    }
                    self.accum(b, &db);
                }
                if self.req(w) {
                    let xv = self.val(x).data().to_vec();
                    let mut dw = vec![0.0; kernel * f * d];
                    for t in 0..t_len {
                        let grow = &g[t * d..(t + 1) * d];
                        for k in 0..kernel {
                            let src = t as isize + k as isize - pad as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let x_row = &xv[src as usize * f..(src as usize + 1) * f];
                            for (fi, &xval) in x_row.iter().enumerate() {
                                if xval == 0.0 {
                                    continue;
                                }
                                let wrow = &mut dw[(k * f + fi) * d..(k * f + fi + 1) * d];
                                for (o, &gval) in grow.iter().enumerate() {
                                    wrow[o] += xval * gval;
                                }
                            }
                        }
                    }
                    self.accum(w, &dw);
                }
                if self.req(x) {
                    let wv = self.val(w).data().to_vec();
                    let mut dx = vec![0.0; t_len * f];
                    for t in 0..t_len {
                        let grow = &g[t * d..(t + 1) * d];
                        for k in 0..kernel {
                            let src = t as isize + k as isize - pad as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let dx_row = &mut dx[src as usize * f..(src as usize + 1) * f];
                            for (fi, dxv) in dx_row.iter_mut().enumerate() {
                                let wrow = &wv[(k * f + fi) * d..(k * f + fi + 1) * d];
                                let mut s = 0.0;
                                for (o, &gval) in grow.iter().enumerate() {
                                    s += wrow[o] * gval;
                                }
                                *dxv += s;
                            }
                        }
                    }
                    self.accum(x, &dx);
                }
            }

            Op::MeanRows { x } => {
                if self.req(x) {
                    let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                    let mut contrib = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            contrib[i * c + j] = g[j] / r as f64;
                        }
                    }
                    self.accum(x, &contrib);
                }
            }

            Op::Reshape { x } => {
                self.accum(x, g);
            }

            Op::SumAll { x } => {
                if self.req(x) {
                    let n = self.val(x).numel();
                    let contrib = vec![g[0]; n];
                    self.accum(x, &contrib);
                }
            }

            Op::CrossEntropySum {
                logits,
                ref targets,
            } => {
                if self.req(logits) {
                    let v = self.val(logits).cols();
                    let lv = self.val(logits).data().to_vec();
                    let mut contrib = vec![0.0; lv.len()];
                    for (t, &y) in targets.iter().enumerate() {
                        let row = &lv[t * v..(t + 1) * v];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|&x| (x - mx).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for c in 0..v {
                            let p = exps[c] / sum;
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            contrib[t * v + c] = g[0] * (p - onehot);
                        }
                    }
                    self.accum(logits, &contrib);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let eye = tape.constant(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let v = tape.constant(t2(2, 1, &[5.0, 6.0]));
        let out = tape.matmul(eye, v).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0, 6.0]);

        let a = tape.constant(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(a, v).unwrap();
        // Hand arithmetic: [1*5+2*6, 3*5+4*6] = [17, 39].
        assert_eq!(tape.value(out).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zeros_annihilate() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(t2(3, 4, &[1.0; 12]));
        let out = tape.matmul(z, b).unwrap();
        assert_eq!(tape.shape(out), &[2, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![4, 2]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_symmetric_and_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
        let s = tape.softmax(x, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        // [0, ln 2] -> [1/3, 2/3]
        let x = tape.constant(Tensor::new(vec![2], vec![0.0, 2.0f64.ln()]).unwrap());
        let s = tape.softmax(x, 0).unwrap();
        assert!((tape.value(s).data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((tape.value(s).data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance_and_sum() {
        let mut tape = Tape::new();
        let raw = [1.3, -0.2, 4.0, 0.7];
        let x = tape.constant(Tensor::new(vec![4], raw.to_vec()).unwrap());
        let shifted: Vec<f64> = raw.iter().map(|v| v + 123.456).collect();
        let y = tape.constant(Tensor::new(vec![4], shifted).unwrap());
        let sx = tape.softmax(x, 0).unwrap();
        let sy = tape.softmax(y, 0).unwrap();
        let a = tape.value(sx).data();
        let b = tape.value(sy).data();
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() < 1e-12);
        }
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(a.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn layer_norm_hand_cases() {
        let mut tape = Tape::new();
        let gamma = tape.constant(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let beta = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());

        // Row [1,3]: mean 2, population var 1 -> [-1, 1] as eps -> 0.
        let x = tape.constant(t2(1, 2, &[1.0, 3.0]));
        let y = tape.layer_norm(x, gamma, beta, 1e-12).unwrap();
        assert!((tape.value(y).data()[0] + 1.0).abs() < 1e-6);
        assert!((tape.value(y).data()[1] - 1.0).abs() < 1e-6);

        // Constant row maps to ~0, and beta offsets it exactly.
        let c = tape.constant(t2(1, 2, &[7.0, 7.0]));
        let y = tape.layer_norm(c, gamma, beta, 1e-5).unwrap();
        for &v in tape.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
        let beta2 = tape.constant(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let y = tape.layer_norm(c, gamma, beta2, 1e-5).unwrap();
        assert!((tape.value(y).data()[0] - 0.5).abs() < 1e-9);
        assert!((tape.value(y).data()[1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn backward_sum_gives_ones_and_identity_chain() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.5));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_twice_is_rejected_and_reset_rearms() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.scale(x, 2.0);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(TgError::Graph(_))));
        tape.reset_grads();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TgError::Graph(_))));
    }

    #[test]
    fn tanh_grad_at_zero_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.tanh(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let unused = tape.leaf(Tensor::scalar(9.0));
        let y = tape.scale(x, 3.0);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_hand_case() {
        // Uniform logits over V -> loss = ln V.
        let mut tape = Tape::new();
        let v = 7;
        let logits = tape.constant(t2(1, v, &vec![0.42; v]));
        let loss = tape.cross_entropy_sum(logits, &[3]).unwrap();
        assert!((tape.value(loss).data()[0] - (v as f64).ln()).abs() < 1e-12);

        // Two classes, logits [0, ln 3], target 1 -> loss = ln(4/3).
        let mut tape = Tape::new();
        let logits = tape.constant(t2(1, 2, &[0.0, 3.0f64.ln()]));
        let loss = tape.cross_entropy_sum(logits, &[1]).unwrap();
        assert!((tape.value(loss).data()[0] - (4.0f64 / 3.0).ln()).abs() < 1e-12);

        // Huge correct logit -> loss -> 0.
        let mut tape = Tape::new();
        let logits = tape.constant(t2(1, 3, &[200.0, 0.0, 0.0]));
        let loss = tape.cross_entropy_sum(logits, &[0]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-12);
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut tape = Tape::new();
        let table = tape.leaf(t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let picked = tape.gather_rows(table, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(picked).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let loss = tape.sum_all(picked);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(table).unwrap(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_cols_layout_and_grad_split() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 1, &[1.0, 2.0]));
        let b = tape.leaf(t2(2, 2, &[10.0, 20.0, 30.0, 40.0]));
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 10.0, 20.0, 2.0, 30.0, 40.0]);
        let loss = tape.sum_all(cat);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Softmax slices are strictly positive distributions and
            // invariant to a constant shift along the axis.
            #[test]
            fn softmax_distribution_and_shift_invariance(
                rows in 1usize..5,
                cols in 1usize..7,
                shift in -100.0f64..100.0,
                raw in proptest::collection::vec(-30.0f64..30.0, 1..35),
            ) {
                let mut data = raw;
                data.resize(rows * cols, 0.37);
                let mut tape = Tape::new();
                let x = tape.constant(Tensor::new(vec![rows, cols], data.clone()).unwrap());
                let s = tape.softmax(x, 1).unwrap();
                for r in 0..rows {
                    let row = &tape.value(s).data()[r * cols..(r + 1) * cols];
                    let sum: f64 = row.iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                    prop_assert!(row.iter().all(|&v| v > 0.0));
                }

                let shifted: Vec<f64> = data.iter().map(|v| v + shift).collect();
                let y = tape.constant(Tensor::new(vec![rows, cols], shifted).unwrap());
                let sy = tape.softmax(y, 1).unwrap();
                for (a, b) in tape.value(s).data().iter().zip(tape.value(sy).data()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            // Summing a gather equals picking entries from a sum-by-row.
            #[test]
            fn gather_preserves_row_content(
                n in 1usize..6,
                d in 1usize..5,
                picks in proptest::collection::vec(0usize..6, 1..8),
            ) {
                let numel = n * d;
                let data: Vec<f64> = (0..numel).map(|i| i as f64 * 0.5 - 1.0).collect();
                let ids: Vec<usize> = picks.into_iter().map(|p| p % n).collect();
                let mut tape = Tape::new();
                let t = tape.constant(Tensor::new(vec![n, d], data.clone()).unwrap());
                let g = tape.gather_rows(t, &ids).unwrap();
                for (r, &i) in ids.iter().enumerate() {
                    for c in 0..d {
                        prop_assert_eq!(tape.value(g).at2(r, c), data[i * d + c]);
                    }
                }
            }
        }
    }

    #[test]
    fn conv1d_identity_kernel_passes_through() {
        // Kernel 1 with w[fi][o] = I acts as a per-frame linear identity.
        let mut tape = Tape::new();
        let x = tape.constant(t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = tape.conv1d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }
}
