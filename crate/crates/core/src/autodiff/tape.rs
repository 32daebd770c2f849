//! Wengert tape for reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value. Operands always
//! refer to earlier nodes, so a single reverse sweep visits each node once.

use std::rc::Rc;

use super::flat::FlatGrad;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Second operand has the same shape, or is a row broadcast over the leading axis.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Mean(Var),
    Sum(Var),
    SumRows(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    BceLogits(Var, Rc<[f64]>),
    SoftmaxCe(Var, Rc<[usize]>),
    Mse(Var, Rc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: adjoints for every node reachable from the loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; exact zeros when `var` is off-path.
    pub fn wrt(&self, var: Var) -> Vec<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.sizes[var.0]],
        }
    }

    /// Concatenated gradient of several parameter tensors, in the given order.
    pub fn flat(&self, vars: &[Var]) -> FlatGrad {
        let mut out = Vec::with_capacity(vars.iter().map(|v| self.sizes[v.0]).sum());
        for &v in vars {
            match &self.grads[v.0] {
                Some(g) => out.extend_from_slice(g),
                None => out.resize(out.len() + self.sizes[v.0], 0.0),
            }
        }
        FlatGrad::from(out)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, operands: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = if av.shape() == bv.shape() {
            av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect()
        } else if av.rank() == 2 && bv.rank() == 1 && bv.shape()[0] == av.shape()[1] {
            let n = bv.numel();
            av.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv.data()[i % n])
                .collect()
        } else {
            return Err(Error::shape("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        };
        let shape = av.shape().to_vec();
        self.push("add", Tensor::from_parts(shape, data), Op::Add(a, b), &[a, b])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let shape = av.shape().to_vec();
        self.push("mul", Tensor::from_parts(shape, data), Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| c * x).collect();
        let shape = av.shape().to_vec();
        self.push("scalar-mul", Tensor::from_parts(shape, data), Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = av.shape().to_vec();
        self.push("relu", Tensor::from_parts(shape, data), Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = av.shape().to_vec();
        self.push("sigmoid", Tensor::from_parts(shape, data), Op::Sigmoid(a), &[a])
    }

    /// Mean of all entries, as a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let m = av.data().iter().sum::<f64>() / av.numel() as f64;
        self.push("mean-reduce", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push("sum-reduce", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Sum over the last axis: `[m, n] -> [m]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(Error::shape("sum-rows", format!("{:?}", av.shape())));
        }
        let n = av.shape()[1];
        let data: Vec<f64> = av.data().chunks(n).map(|r| r.iter().sum()).collect();
        let m = data.len();
        self.push("sum-rows", Tensor::from_parts(vec![m], data), Op::SumRows(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(shape.to_vec(), av.data().to_vec())
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", av.shape())))?;
        self.push("reshape", t, Op::Reshape(a), &[a])
    }

    /// Concatenate along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        let proto = self.value(*first);
        let (rank, width) = (proto.rank(), proto.row_len());
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != rank || pv.row_len() != width {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", proto.shape(), pv.shape()),
                ));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let shape = if rank == 2 { vec![rows, width] } else { vec![rows] };
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// Select rows by index (repeats allowed).
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (rows, width) = (av.rows(), av.row_len());
        if index.is_empty() {
            return Err(Error::shape("index-gather", "empty index list"));
        }
        let mut data = Vec::with_capacity(index.len() * width);
        for &i in index {
            if i >= rows {
                return Err(Error::shape("index-gather", format!("row {i} out of {rows}")));
            }
            data.extend_from_slice(&av.data()[i * width..(i + 1) * width]);
        }
        let shape = if av.rank() == 2 {
            vec![index.len(), width]
        } else {
            vec![index.len()]
        };
        self.push("index-gather", Tensor::from_parts(shape, data), Op::Gather(a, index.into()), &[a])
    }

    /// Adjoint of [`gather`](Self::gather): row `r` of `a` is added into output row `index[r]`.
    pub fn scatter_add(&mut self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let av = self.value(a);
        let width = av.row_len();
        if index.len() != av.rows() || out_rows == 0 {
            return Err(Error::shape(
                "scatter-add",
                format!("{} indices for {} rows into {out_rows}", index.len(), av.rows()),
            ));
        }
        let mut data = vec![0.0; out_rows * width];
        for (r, &i) in index.iter().enumerate() {
            if i >= out_rows {
                return Err(Error::shape("scatter-add", format!("row {i} out of {out_rows}")));
            }
            let src = &av.data()[r * width..(r + 1) * width];
            for (d, s) in data[i * width..(i + 1) * width].iter_mut().zip(src) {
                *d += s;
            }
        }
        let shape = if av.rank() == 2 {
            vec![out_rows, width]
        } else {
            vec![out_rows]
        };
        self.push("scatter-add", Tensor::from_parts(shape, data), Op::ScatterAdd(a, index.into()), &[a])
    }

    /// Mean binary cross-entropy between logits and `{0,1}` (or soft) targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.numel() != targets.len() {
            return Err(Error::shape(
                "bce-with-logits",
                format!("{} logits, {} targets", lv.numel(), targets.len()),
            ));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite { op: "bce-with-logits" });
        }
        let n = targets.len() as f64;
        let loss = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(
            "bce-with-logits",
            Tensor::scalar(loss),
            Op::BceLogits(logits, targets.into()),
            &[logits],
        )
    }

    /// Mean softmax cross-entropy of `[m, c]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.rows() != classes.len() {
            return Err(Error::shape(
                "softmax-cross-entropy",
                format!("logits {:?}, {} labels", lv.shape(), classes.len()),
            ));
        }
        let c = lv.shape()[1];
        let mut loss = 0.0;
        for (row, &y) in lv.data().chunks(c).zip(classes) {
            if y >= c {
                return Err(Error::shape("softmax-cross-entropy", format!("class {y} >= {c}")));
            }
            loss += log_sum_exp(row) - row[y];
        }
        loss /= classes.len() as f64;
        self.push(
            "softmax-cross-entropy",
            Tensor::scalar(loss),
            Op::SoftmaxCe(logits, classes.into()),
            &[logits],
        )
    }

    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.numel() != targets.len() {
            return Err(Error::shape(
                "mean-squared-error",
                format!("{} predictions, {} targets", pv.numel(), targets.len()),
            ));
        }
        let loss = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / targets.len() as f64;
        self.push("mean-squared-error", Tensor::scalar(loss), Op::Mse(pred, targets.into()), &[pred])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads, sizes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, contribution: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
        contribution(slot);
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        let urow = &up[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            ga[i * k + p] += urow.iter().zip(brow).map(|(u, b)| u * b).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        let urow = &up[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av.data()[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (g, u) in gb[p * n..(p + 1) * n].iter_mut().zip(urow) {
                                *g += a_ip * u;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, up));
                let same = self.value(*a).shape() == self.value(*b).shape();
                self.accumulate(grads, *b, |gb| {
                    if same {
                        add_into(gb, up);
                    } else {
                        let n = gb.len();
                        for row in up.chunks(n) {
                            add_into(gb, row);
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((g, u), y) in ga.iter_mut().zip(up).zip(bv.data()) {
                        *g += u * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((g, u), x) in gb.iter_mut().zip(up).zip(av.data()) {
                        *g += u * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    for (g, u) in ga.iter_mut().zip(up) {
                        *g += c * u;
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((g, u), x) in ga.iter_mut().zip(up).zip(av.data()) {
                        if *x > 0.0 {
                            *g += u;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((g, u), s) in ga.iter_mut().zip(up).zip(out) {
                        *g += u * s * (1.0 - s);
                    }
                });
            }
            Op::Mean(a) => {
                let scale = up[0] / self.value(*a).numel() as f64;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|g| *g += scale));
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|g| *g += up[0]));
            }
            Op::SumRows(a) => {
                let n = self.value(*a).shape()[1];
                self.accumulate(grads, *a, |ga| {
                    for (row, u) in ga.chunks_mut(n).zip(up) {
                        row.iter_mut().for_each(|g| *g += u);
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |ga| add_into(ga, up)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    self.accumulate(grads, *p, |gp| add_into(gp, &up[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Gather(a, index) => {
                let width = self.value(*a).row_len();
                self.accumulate(grads, *a, |ga| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut ga[i * width..(i + 1) * width], &up[r * width..(r + 1) * width]);
                    }
                });
            }
            Op::ScatterAdd(a, index) => {
                let width = self.value(*a).row_len();
                self.accumulate(grads, *a, |ga| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut ga[r * width..(r + 1) * width], &up[i * width..(i + 1) * width]);
                    }
                });
            }
            Op::BceLogits(a, targets) => {
                let zs = self.value(*a).data();
                let scale = up[0] / targets.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((g, &z), &y) in ga.iter_mut().zip(zs).zip(targets.iter()) {
                        *g += scale * (sigmoid(z) - y);
                    }
                });
            }
            Op::SoftmaxCe(a, classes) => {
                let lv = self.value(*a);
                let c = lv.shape()[1];
                let scale = up[0] / classes.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((grow, row), &y) in ga.chunks_mut(c).zip(lv.data().chunks(c)).zip(classes.iter()) {
                        let lse = log_sum_exp(row);
                        for (j, (g, z)) in grow.iter_mut().zip(row).enumerate() {
                            let p = (z - lse).exp();
                            *g += scale * (p - if j == y { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            Op::Mse(a, targets) => {
                let pv = self.value(*a).data();
                let scale = 2.0 * up[0] / targets.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((g, p), t) in ga.iter_mut().zip(pv).zip(targets.iter()) {
                        *g += scale * (p - t);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            for (o, b) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += a_ip * b;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}
