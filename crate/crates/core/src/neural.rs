//! Minimal tensors, a reverse-mode tape, and the layers a weight-dropped LSTM
//! needs: LSTM cells, weight drop, locked and embedding dropout, batch
//! normalisation, softmax cross-entropy and Adam.
//!
//! Values are `f64`. Matrices are row-major `[rows, cols]`; a batch of vectors
//! is a `[batch, dim]` matrix.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("batch normalisation needs more than {0} example in training mode")]
    BatchTooSmall(usize),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NeuralError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NeuralError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut RngStream) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.uniform_range(-bound, bound)).collect(),
        }
    }

    /// A `[rows, cols]` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        Self {
            shape: vec![r, c],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_rate(rate: f64) -> Result<(), NeuralError> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NeuralError::InvalidRate(rate))
    }
}

/// Inverted-dropout keep mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut RngStream) -> Result<Vec<f64>, NeuralError> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..n)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect())
}

/// DropConnect on a recurrent weight matrix. One mask per call; the caller
/// reuses the result for every timestep of the sequence.
pub fn weight_drop(
    weights: &Tensor,
    rate: f64,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<Tensor, NeuralError> {
    check_rate(rate)?;
    if mode == Mode::Eval {
        return Ok(weights.clone());
    }
    let mask = dropout_mask(weights.len(), rate, rng)?;
    Ok(Tensor {
        shape: weights.shape.clone(),
        data: weights.data.iter().zip(&mask).map(|(w, m)| w * m).collect(),
    })
}

/// Variational dropout on a `[time, batch, dim]` tensor: one `[batch, dim]`
/// mask shared by every timestep.
pub fn locked_dropout(
    seq: &Tensor,
    rate: f64,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<Tensor, NeuralError> {
    check_rate(rate)?;
    if seq.shape.len() != 3 {
        return Err(NeuralError::ShapeMismatch(format!(
            "locked dropout expects [time, batch, dim], got {:?}",
            seq.shape
        )));
    }
    if mode == Mode::Eval {
        return Ok(seq.clone());
    }
    let step = seq.shape[1] * seq.shape[2];
    let mask = dropout_mask(step, rate, rng)?;
    Ok(Tensor {
        shape: seq.shape.clone(),
        data: seq
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x * mask[i % step])
            .collect(),
    })
}

/// Drops whole rows (token types) of an embedding matrix.
pub fn embedding_dropout(
    table: &Tensor,
    rate: f64,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<Tensor, NeuralError> {
    check_rate(rate)?;
    if mode == Mode::Eval {
        return Ok(table.clone());
    }
    let mask = dropout_mask(table.rows(), rate, rng)?;
    let c = table.cols();
    Ok(Tensor {
        shape: table.shape.clone(),
        data: table
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x * mask[i / c])
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Parameters

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors with an index by name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        let id = ParamId(self.values.len());
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter {name}"
        );
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn n_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Gradients indexed like the store; `None` for parameters not reached.
pub type Gradients = Vec<Option<Vec<f64>>>;

// ---------------------------------------------------------------------------
// Tape

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// `[last, max, mean]` over the valid timesteps.
    Concat,
    Last,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, Rc<Vec<f64>>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols { src: Var, start: usize, len: usize },
    SliceRows { src: Var, start: usize, len: usize },
    ConcatRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Pool { steps: Vec<Var>, lengths: Vec<usize>, argmax: Vec<usize>, kind: Pooling },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recording of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A parameter. Frozen parameters enter as constants so no gradient flows
    /// into them; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(
            store.get(id).clone(),
            if trainable { Op::Param(id) } else { Op::Leaf },
            trainable,
        );
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(k, bv.rows(), "matmul inner dims");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av.data[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv.data[p * n..(p + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += x * b;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), ng)
    }

    /// `a @ b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(k, bv.cols(), "matmul_t inner dims");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "add shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor { shape, data }, Op::Add(a, b), ng)
    }

    /// Adds a row vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let c = av.cols();
        assert_eq!(c, rv.len(), "add_row width");
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + rv.data[i % c])
            .collect();
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(row);
        self.push(Tensor { shape, data }, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "mul shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor { shape, data }, Op::Mul(a, b), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn scale(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), mask.len(), "scale shapes");
        let data = av.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        let shape = av.shape.clone();
        let ng = self.ng(a);
        self.push(Tensor { shape, data }, Op::Scale(a, mask), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let t = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| f(x)).collect(),
        };
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let sv = self.value(src);
        let (r, c) = (sv.rows(), sv.cols());
        assert!(start + len <= c);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&sv.data[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(src);
        self.push(Tensor { shape: vec![r, len], data }, Op::SliceCols { src, start, len }, ng)
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Var {
        let sv = self.value(src);
        let c = sv.cols();
        assert!(start + len <= sv.rows());
        let data = sv.data[start * c..(start + len) * c].to_vec();
        let ng = self.ng(src);
        self.push(Tensor { shape: vec![len, c], data }, Op::SliceRows { src, start, len }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut ng = false;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), c, "concat_rows widths");
            rows += pv.rows();
            data.extend_from_slice(&pv.data);
            ng |= self.ng(p);
        }
        self.push(Tensor { shape: vec![rows, c], data }, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let c = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let ng = self.ng(table);
        self.push(
            Tensor { shape: vec![ids.len(), c], data },
            Op::Gather { table, ids: ids.to_vec() },
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Tensor { shape: vec![1], data: vec![s] }, Op::Sum(a), ng)
    }

    /// Mean softmax cross-entropy over the rows of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NeuralError> {
        let (loss, probs) = softmax_ce_forward(self.value(logits), targets)?;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor { shape: vec![1], data: vec![loss] },
            Op::SoftmaxCe { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    /// Batch normalisation over rows. In training mode the batch statistics
    /// are used and `running` is updated; in eval mode `running` is used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut BatchNormStats,
        mode: Mode,
    ) -> Result<Var, NeuralError> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NeuralError::BatchTooSmall(1));
                }
                let (mean, var) = column_moments(xv);
                running.update(&mean, &var, n);
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + running.eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                xhat[i * d + j] = (xv.data[i * d + j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let out = (0..n * d).map(|k| g[k % d] * xhat[k] + b[k % d]).collect();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let batch_stats = mode == Mode::Train;
        Ok(self.push(
            Tensor { shape: vec![n, d], data: out },
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats },
            ng,
        ))
    }

    /// Pools per-timestep `[batch, dim]` outputs over each sequence's valid
    /// prefix (`lengths[b] >= 1`).
    pub fn pool(&mut self, steps: &[Var], lengths: &[usize], kind: Pooling) -> Var {
        let b = lengths.len();
        let d = self.value(steps[0]).cols();
        let width = match kind {
            Pooling::Concat => 3 * d,
            Pooling::Last => d,
        };
        let mut out = vec![0.0; b * width];
        let mut argmax = vec![0usize; b * d];
        for (bi, &len) in lengths.iter().enumerate() {
            assert!(len >= 1 && len <= steps.len(), "pool length");
            let last = self.value(steps[len - 1]).row(bi);
            out[bi * width..bi * width + d].copy_from_slice(last);
            if kind == Pooling::Concat {
                for j in 0..d {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_t = 0;
                    let mut sum = 0.0;
                    for (t, &s) in steps[..len].iter().enumerate() {
                        let x = self.value(s).data[bi * d + j];
                        sum += x;
                        if x > best {
                            best = x;
                            best_t = t;
                        }
                    }
                    out[bi * width + d + j] = best;
                    out[bi * width + 2 * d + j] = sum / len as f64;
                    argmax[bi * d + j] = best_t;
                }
            }
        }
        let ng = steps.iter().any(|&s| self.ng(s));
        self.push(
            Tensor { shape: vec![b, width], data: out },
            Op::Pool { steps: steps.to_vec(), lengths: lengths.to_vec(), argmax, kind },
            ng,
        )
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// One LSTM step. Gate layout in the fused weights is `[i, f, g, o]`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var) -> (Var, Var) {
        let hd = self.value(c).cols();
        let xi = self.matmul(x, w_ih);
        let hh = self.matmul(h, w_hh);
        let pre = self.add(xi, hh);
        let gates = self.add_row(pre, bias);
        let i = self.slice_cols(gates, 0, hd);
        let f = self.slice_cols(gates, hd, hd);
        let g = self.slice_cols(gates, 2 * hd, hd);
        let o = self.slice_cols(gates, 3 * hd, hd);
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let g = self.tanh(g);
        let o = self.sigmoid(o);
        let fc = self.mul(f, c);
        let ig = self.mul(i, g);
        let c_next = self.add(fc, ig);
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc);
        (h_next, c_next)
    }

    /// Reverse pass from a scalar node; returns gradients for every
    /// trainable parameter that was reached.
    pub fn backward(&self, loss: Var, n_params: usize) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        let mut out: Gradients = vec![None; n_params];
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &dy, &mut grads, &mut out);
        }
        out
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut Gradients) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let g = out[id.0].get_or_insert_with(|| vec![0.0; dy.len()]);
                for (a, b) in g.iter_mut().zip(dy) {
                    *a += b;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..m {
                        let drow = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            ga[i * k + p] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..m {
                        let drow = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av.data[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (g, d) in gb[p * n..(p + 1) * n].iter_mut().zip(drow) {
                                *g += x * d;
                            }
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            let d = dy[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            for (g, y) in ga[i * k..(i + 1) * k].iter_mut().zip(&bv.data[j * k..(j + 1) * k]) {
                                *g += d * y;
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..m {
                        let arow = &av.data[i * k..(i + 1) * k];
                        for j in 0..n {
                            let d = dy[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            for (g, x) in gb[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                *g += d * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.acc(grads, v) {
                        for (x, d) in g.iter_mut().zip(dy) {
                            *x += d;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(g) = self.acc(grads, *a) {
                    for (x, d) in g.iter_mut().zip(dy) {
                        *x += d;
                    }
                }
                let c = self.value(*row).len();
                if let Some(g) = self.acc(grads, *row) {
                    for (i, d) in dy.iter().enumerate() {
                        g[i % c] += d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data.clone(), self.value(*b).data.clone());
                if let Some(g) = self.acc(grads, *a) {
                    for ((x, d), y) in g.iter_mut().zip(dy).zip(&bv) {
                        *x += d * y;
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for ((x, d), y) in g.iter_mut().zip(dy).zip(&av) {
                        *x += d * y;
                    }
                }
            }
            Op::Scale(a, mask) => {
                if let Some(g) = self.acc(grads, *a) {
                    for ((x, d), m) in g.iter_mut().zip(dy).zip(mask.iter()) {
                        *x += d * m;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                if let Some(g) = self.acc(grads, *a) {
                    for ((x, d), s) in g.iter_mut().zip(dy).zip(y) {
                        *x += d * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                if let Some(g) = self.acc(grads, *a) {
                    for ((x, d), t) in g.iter_mut().zip(dy).zip(y) {
                        *x += d * (1.0 - t * t);
                    }
                }
            }
            Op::Relu(a) => {
                let y = &node.value.data;
                if let Some(g) = self.acc(grads, *a) {
                    for ((x, d), r) in g.iter_mut().zip(dy).zip(y) {
                        if *r > 0.0 {
                            *x += d;
                        }
                    }
                }
            }
            Op::SliceCols { src, start, len } => {
                let c = self.value(*src).cols();
                if let Some(g) = self.acc(grads, *src) {
                    for (i, drow) in dy.chunks(*len).enumerate() {
                        for (x, d) in g[i * c + start..i * c + start + len].iter_mut().zip(drow) {
                            *x += d;
                        }
                    }
                }
            }
            Op::SliceRows { src, start, len } => {
                let c = self.value(*src).cols();
                if let Some(g) = self.acc(grads, *src) {
                    for (x, d) in g[start * c..(start + len) * c].iter_mut().zip(dy) {
                        *x += d;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(g) = self.acc(grads, p) {
                        for (x, d) in g.iter_mut().zip(&dy[off..off + n]) {
                            *x += d;
                        }
                    }
                    off += n;
                }
            }
            Op::Gather { table, ids } => {
                let c = self.value(*table).cols();
                if let Some(g) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, d) in g[id * c..(id + 1) * c].iter_mut().zip(&dy[r * c..(r + 1) * c]) {
                            *x += d;
                        }
                    }
                }
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let c = self.value(*logits).cols();
                let n = targets.len() as f64;
                if let Some(g) = self.acc(grads, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            g[i * c + j] += dy[0] * (probs[i * c + j] - ind) / n;
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let d = inv_std.len();
                let n = xhat.len() / d;
                let gv = self.value(*gamma).data.clone();
                if let Some(g) = self.acc(grads, *gamma) {
                    for k in 0..n * d {
                        g[k % d] += dy[k] * xhat[k];
                    }
                }
                if let Some(g) = self.acc(grads, *beta) {
                    for k in 0..n * d {
                        g[k % d] += dy[k];
                    }
                }
                if let Some(g) = self.acc(grads, *x) {
                    if !batch_stats {
                        // running statistics are constants
                        for k in 0..n * d {
                            g[k] += dy[k] * gv[k % d] * inv_std[k % d];
                        }
                    } else {
                        for j in 0..d {
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for i in 0..n {
                                let dxh = dy[i * d + j] * gv[j];
                                s1 += dxh;
                                s2 += dxh * xhat[i * d + j];
                            }
                            let nf = n as f64;
                            for i in 0..n {
                                let dxh = dy[i * d + j] * gv[j];
                                g[i * d + j] += inv_std[j] / nf * (nf * dxh - s1 - xhat[i * d + j] * s2);
                            }
                        }
                    }
                }
            }
            Op::Pool { steps, lengths, argmax, kind } => {
                let d = self.value(steps[0]).cols();
                let width = dy.len() / lengths.len();
                for (t, &s) in steps.iter().enumerate() {
                    if !self.ng(s) {
                        continue;
                    }
                    let mut local = vec![0.0; self.value(s).len()];
                    let mut touched = false;
                    for (bi, &len) in lengths.iter().enumerate() {
                        if t >= len {
                            continue;
                        }
                        for j in 0..d {
                            let mut v = 0.0;
                            if t == len - 1 {
                                v += dy[bi * width + j];
                            }
                            if *kind == Pooling::Concat {
                                if argmax[bi * d + j] == t {
                                    v += dy[bi * width + d + j];
                                }
                                v += dy[bi * width + 2 * d + j] / len as f64;
                            }
                            if v != 0.0 {
                                local[bi * d + j] += v;
                                touched = true;
                            }
                        }
                    }
                    if touched {
                        let g = self.acc(grads, s).expect("needs grad");
                        for (x, l) in g.iter_mut().zip(&local) {
                            *x += l;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    for x in g.iter_mut() {
                        *x += dy[0];
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.data.clone();
    for row in out.chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    Tensor {
        shape: logits.shape.clone(),
        data: out,
    }
}

fn softmax_ce_forward(logits: &Tensor, targets: &[usize]) -> Result<(f64, Vec<f64>), NeuralError> {
    let c = logits.cols();
    if logits.rows() != targets.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{} rows of logits for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let probs = softmax_rows(logits).data;
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(NeuralError::TargetOutOfRange { target: t, classes: c });
        }
        let row = &logits.data[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    Ok((loss / targets.len().max(1) as f64, probs))
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor), NeuralError> {
    let (loss, probs) = softmax_ce_forward(logits, targets)?;
    let c = logits.cols();
    let n = targets.len() as f64;
    let mut grad = probs;
    for (i, &t) in targets.iter().enumerate() {
        grad[i * c + t] -= 1.0;
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok((loss, Tensor { shape: logits.shape.clone(), data: grad }))
}

fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += x.data[i * d + j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let e = x.data[i * d + j] - mean[j];
            var[j] += e * e;
        }
    }
    for v in &mut var {
        *v /= n as f64;
    }
    (mean, var)
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Exponential moving average; the running variance uses the unbiased
    /// batch estimate.
    fn update(&mut self, mean: &[f64], var: &[f64], n: usize) {
        let unbias = n as f64 / (n as f64 - 1.0);
        for j in 0..mean.len() {
            self.mean[j] = (1.0 - self.momentum) * self.mean[j] + self.momentum * mean[j];
            self.var[j] = (1.0 - self.momentum) * self.var[j] + self.momentum * var[j] * unbias;
        }
    }
}

/// Value-level batch normalisation of a `[batch, features]` matrix.
pub fn batch_norm(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut BatchNormStats,
    mode: Mode,
) -> Result<Tensor, NeuralError> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gv = g.constant(Tensor { shape: vec![gamma.len()], data: gamma.to_vec() });
    let bv = g.constant(Tensor { shape: vec![beta.len()], data: beta.to_vec() });
    let y = g.batch_norm(xv, gv, bv, stats, mode)?;
    Ok(g.value(y).clone())
}

/// Parameters of one LSTM layer: `w_ih: [input, 4H]`, `w_hh: [H, 4H]`, `bias: [4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Value-level LSTM step for `[batch, dim]` inputs.
pub fn lstm_cell(x: &Tensor, h: &Tensor, c: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor), NeuralError> {
    let hd = c.cols();
    if p.w_ih.rows() != x.cols()
        || p.w_ih.cols() != 4 * hd
        || p.w_hh.shape != [hd, 4 * hd]
        || p.bias.len() != 4 * hd
        || h.cols() != hd
        || x.rows() != h.rows()
        || h.rows() != c.rows()
    {
        return Err(NeuralError::ShapeMismatch("lstm_cell parameters".into()));
    }
    let mut g = Graph::new();
    let vars = [x, h, c, &p.w_ih, &p.w_hh, &p.bias].map(|t| g.constant(t.clone()));
    let (h2, c2) = g.lstm_cell(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5]);
    Ok((g.value(h2).clone(), g.value(c2).clone()))
}

// ---------------------------------------------------------------------------
// Optimiser

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

/// Adam with bias correction. Each parameter keeps its own step count, so a
/// parameter that was frozen for a while starts its correction fresh.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: HashMap<ParamId, AdamSlot>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: HashMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = ParamId(i);
            let slot = self.slots.entry(id).or_insert_with(|| AdamSlot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
            let w = store.get_mut(id);
            for k in 0..g.len() {
                slot.m[k] = self.beta1 * slot.m[k] + (1.0 - self.beta1) * g[k];
                slot.v[k] = self.beta2 * slot.v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = slot.m[k] / bc1;
                let vhat = slot.v[k] / bc2;
                w.data[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Largest numeric derivative among entries whose analytic gradient is
    /// exactly zero (a parameter the loss does not depend on, a dropped
    /// weight). Those entries are left out of `max_rel_error`.
    pub max_numeric_at_zero: f64,
}

impl GradCheckReport {
    /// Relative error under `rel_tol` and every structurally-zero entry
    /// numerically below `zero_tol`.
    pub fn passes(&self, rel_tol: f64, zero_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_numeric_at_zero < zero_tol
    }
}

/// Central finite differences against analytic gradients for every entry of
/// every parameter. `loss_fn(store, need_grad)` returns the loss and, when
/// asked, the analytic gradients. Relative error is
/// `|a - n| / (max(|a|, |n|) + 1e-12)`.
pub fn grad_check<F>(store: &mut ParamStore, loss_fn: F, eps: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore, bool) -> (f64, Gradients),
{
    grad_check_stencil(store, loss_fn, eps, Stencil::Two)
}

/// Central-difference stencils. Higher orders trade more evaluations for a
/// smaller truncation error, which allows a larger step and so less
/// round-off; that matters when gradients are many orders below the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Two,
    Four,
    Six,
}

impl Stencil {
    /// `(offset multiple, weight)` pairs; the derivative is `sum(w * f(x + k h)) / h`.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Two => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::Four => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
            Stencil::Six => &[
                (3.0, 1.0 / 60.0),
                (2.0, -9.0 / 60.0),
                (1.0, 45.0 / 60.0),
                (-1.0, -45.0 / 60.0),
                (-2.0, 9.0 / 60.0),
                (-3.0, -1.0 / 60.0),
            ],
        }
    }
}

pub fn grad_check_stencil<F>(store: &mut ParamStore, mut loss_fn: F, eps: f64, stencil: Stencil) -> GradCheckReport
where
    F: FnMut(&ParamStore, bool) -> (f64, Gradients),
{
    let (_, analytic) = loss_fn(store, true);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_values: (0.0, 0.0),
        checked: 0,
        max_numeric_at_zero: 0.0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data[k];
            let mut acc = 0.0;
            for &(m, w) in stencil.taps() {
                store.get_mut(id).data[k] = orig + m * eps;
                acc += w * loss_fn(store, false).0;
            }
            store.get_mut(id).data[k] = orig;
            let numeric = acc / eps;
            let a = analytic[id.0].as_ref().map_or(0.0, |g| g[k]);
            report.checked += 1;
            if a == 0.0 {
                report.max_numeric_at_zero = report.max_numeric_at_zero.max(numeric.abs());
                continue;
            }
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-12);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = k;
                report.worst_values = (a, numeric);
            }
        }
    }
    report
}
