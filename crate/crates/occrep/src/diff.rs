//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation; [`Tape::backward`] replays the record
//! in reverse and accumulates exact gradients. Tensors are rank 0..=2,
//! row-major f64. Elementwise binary ops broadcast a scalar operand against
//! the other operand's shape.

use serde::{Deserialize, Serialize};

use crate::erf;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor { shape: vec![rows, cols], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => self.shape[0],
            _ => 1,
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    /// Reduce to scalar; gradient routed to the first maximal element.
    MaxReduce(usize, usize),
    /// Elementwise max of two same-shape tensors; ties route to the left.
    VMax(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Erf(usize),
    Sqrt(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
    /// Scalar broadcast to a vector of the given length.
    Broadcast(usize),
    Clamp { src: usize, lo: f64, hi: f64 },
    /// Column vector (m) outer row vector (n) -> m x n.
    Outer(usize, usize),
    /// (m x n) + row vector (n), broadcast over rows.
    AddRowBroadcast(usize, usize),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    nonfinite: Option<String>,
}

pub struct Grads {
    grads: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }
}

fn broadcast_pair(a: &Tensor, b: &Tensor) -> Option<Vec<usize>> {
    if a.shape == b.shape {
        Some(a.shape.clone())
    } else if a.is_scalar() {
        Some(b.shape.clone())
    } else if b.is_scalar() {
        Some(a.shape.clone())
    } else {
        None
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn vector(&mut self, v: Vec<f64>) -> Var {
        self.leaf(Tensor::vector(v))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.nonfinite.is_none() && !value.all_finite() {
            self.nonfinite = Some(format!(
                "non-finite value produced by {:?} at node {}",
                op,
                self.nodes.len()
            ));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// First non-finite forward value recorded on this tape, if any.
    pub fn numeric_error(&self) -> Result<()> {
        match &self.nonfinite {
            Some(msg) => Err(Error::Numeric(msg.clone())),
            None => Ok(()),
        }
    }

    fn binary_ew(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_pair(ta, tb)
            .unwrap_or_else(|| panic!("{name}: incompatible shapes {:?} vs {:?}", ta.shape, tb.shape));
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let x = ta.data[if ta.is_scalar() { 0 } else { i }];
            let y = tb.data[if tb.is_scalar() { 0 } else { i }];
            data.push(f(x, y));
        }
        self.push(Tensor { shape, data }, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_ew(a, b, |x, y| x + y, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_ew(a, b, |x, y| x - y, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_ew(a, b, |x, y| x * y, Op::Mul(a.0, b.0), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_ew(a, b, |x, y| x / y, Op::Div(a.0, b.0), "div")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| -v).collect() };
        self.push(value, Op::Neg(a.0))
    }

    pub fn vmax(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape, tb.shape, "vmax: shape mismatch");
        self.binary_ew(a, b, |x, y| if x >= y { x } else { y }, Op::VMax(a.0, b.0), "vmax")
    }

    fn unary_ew(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| f(v)).collect() };
        self.push(value, op)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary_ew(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary_ew(a, f64::ln, Op::Log(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary_ew(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary_ew(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn erf(&mut self, a: Var) -> Var {
        self.unary_ew(a, erf::erf, Op::Erf(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary_ew(a, f64::sqrt, Op::Sqrt(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary_ew(a, |v| v.clamp(lo, hi), Op::Clamp { src: a.0, lo, hi })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(ta.shape.len() == 2, "matmul: lhs must be rank 2");
        assert!(
            tb.shape.len() == 2 || tb.shape.len() == 1,
            "matmul: rhs must be rank 1 or 2"
        );
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = (tb.rows(), tb.cols());
        assert_eq!(k, kb, "matmul: inner dimension mismatch {k} vs {kb}");
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                let crow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
        let shape = if tb.shape.len() == 1 { vec![m] } else { vec![m, n] };
        self.push(Tensor { shape, data }, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        assert_eq!(t.shape.len(), 2, "transpose: rank 2 required");
        let (m, n) = (t.shape[0], t.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data[i * n + j];
            }
        }
        self.push(Tensor { shape: vec![n, m], data }, Op::Transpose(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        // f64 data with sequential accumulation; inputs at desk scale keep
        // this well within tolerance.
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn max_reduce(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        assert!(!t.data.is_empty(), "max_reduce: empty tensor");
        let mut arg = 0;
        let mut best = t.data[0];
        for (i, &v) in t.data.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i;
            }
        }
        self.push(Tensor::scalar(best), Op::MaxReduce(a.0, arg))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        assert!(t.shape.len() <= 1 || t.cols() == 1, "softmax: vector required");
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data = exps.iter().map(|e| e / total).collect();
        self.push(Tensor { shape: vec![t.len()], data }, Op::Softmax(a.0))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: no operands");
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::vector(data), Op::Concat(ids))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = &self.nodes[a.0].value;
        assert!(start + len <= t.len(), "slice: out of bounds");
        let data = t.data[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice { src: a.0, start })
    }

    pub fn broadcast(&mut self, a: Var, len: usize) -> Var {
        let t = &self.nodes[a.0].value;
        assert!(t.is_scalar(), "broadcast: scalar required");
        let data = vec![t.data[0]; len];
        self.push(Tensor::vector(data), Op::Broadcast(a.0))
    }

    pub fn outer(&mut self, col: Var, row: Var) -> Var {
        let (tc, tr) = (&self.nodes[col.0].value, &self.nodes[row.0].value);
        assert!(tc.shape.len() == 1 && tr.shape.len() == 1, "outer: vectors required");
        let (m, n) = (tc.len(), tr.len());
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(tc.data[i] * tr.data[j]);
            }
        }
        self.push(Tensor::matrix(m, n, data), Op::Outer(col.0, row.0))
    }

    pub fn add_row_broadcast(&mut self, mat: Var, row: Var) -> Var {
        let (tm, tr) = (&self.nodes[mat.0].value, &self.nodes[row.0].value);
        assert_eq!(tm.shape.len(), 2, "add_row_broadcast: matrix required");
        assert_eq!(tm.cols(), tr.len(), "add_row_broadcast: width mismatch");
        let (m, n) = (tm.shape[0], tm.shape[1]);
        let mut data = tm.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += tr.data[j];
            }
        }
        self.push(Tensor::matrix(m, n, data), Op::AddRowBroadcast(mat.0, row.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = &self.nodes[a.0].value;
        assert_eq!(t.len(), shape.iter().product::<usize>(), "reshape: size mismatch");
        let value = Tensor { shape: shape.to_vec(), data: t.data.clone() };
        self.push(value, Op::Reshape(a.0))
    }

    /// Convenience: W x + b for rank-2 `w`, rank-1 `x`/`b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let wx = self.matmul(w, x);
        self.add(wx, b)
    }

    /// Reverse pass from a scalar output. Errors if any forward value on the
    /// tape was non-finite.
    pub fn backward(&self, output: Var) -> Result<Grads> {
        self.numeric_error()?;
        let out = &self.nodes[output.0].value;
        assert!(out.is_scalar(), "backward: scalar output required");
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(&n.value.shape))
            .collect();
        grads[output.0].data[0] = 1.0;

        for idx in (0..=output.0).rev() {
            let g = std::mem::replace(&mut grads[idx], Tensor::zeros(&[]));
            if g.data.iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = g;
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Tensor]) {
        let val = |i: usize| &self.nodes[i].value;
        // Adds `contrib(i)` to grads[target], reducing over broadcast scalars.
        fn acc(grads: &mut [Tensor], target: usize, contrib: impl Fn(usize) -> f64, n: usize) {
            let gt = &mut grads[target];
            if gt.is_scalar() && n > 1 {
                let mut s = 0.0;
                for i in 0..n {
                    s += contrib(i);
                }
                gt.data[0] += s;
            } else {
                for i in 0..n {
                    gt.data[i] += contrib(i);
                }
            }
        }

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let n = g.len();
                acc(grads, *a, |i| g.data[i], n);
                acc(grads, *b, |i| g.data[i], n);
            }
            Op::Sub(a, b) => {
                let n = g.len();
                acc(grads, *a, |i| g.data[i], n);
                acc(grads, *b, |i| -g.data[i], n);
            }
            Op::Mul(a, b) => {
                let n = g.len();
                let (ta, tb) = (val(*a).clone(), val(*b).clone());
                let pick = |t: &Tensor, i: usize| t.data[if t.is_scalar() { 0 } else { i }];
                acc(grads, *a, |i| g.data[i] * pick(&tb, i), n);
                acc(grads, *b, |i| g.data[i] * pick(&ta, i), n);
            }
            Op::Div(a, b) => {
                let n = g.len();
                let (ta, tb) = (val(*a).clone(), val(*b).clone());
                let pick = |t: &Tensor, i: usize| t.data[if t.is_scalar() { 0 } else { i }];
                acc(grads, *a, |i| g.data[i] / pick(&tb, i), n);
                acc(grads, *b, |i| {
                    let bv = pick(&tb, i);
                    -g.data[i] * pick(&ta, i) / (bv * bv)
                }, n);
            }
            Op::Neg(a) => {
                let n = g.len();
                acc(grads, *a, |i| -g.data[i], n);
            }
            Op::VMax(a, b) => {
                let n = g.len();
                let (ta, tb) = (val(*a).clone(), val(*b).clone());
                acc(grads, *a, |i| if ta.data[i] >= tb.data[i] { g.data[i] } else { 0.0 }, n);
                acc(grads, *b, |i| if ta.data[i] >= tb.data[i] { 0.0 } else { g.data[i] }, n);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a).clone(), val(*b).clone());
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                // dA = G B^T
                {
                    let ga = &mut grads[*a];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g.data[i * n + j] * tb.data[p * n + j];
                            }
                            ga.data[i * k + p] += s;
                        }
                    }
                }
                // dB = A^T G
                {
                    let gb = &mut grads[*b];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += ta.data[i * k + p] * g.data[i * n + j];
                            }
                            gb.data[p * n + j] += s;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let t = val(*a);
                let (m, n) = (t.shape[0], t.shape[1]);
                let ga = &mut grads[*a];
                for i in 0..m {
                    for j in 0..n {
                        ga.data[i * n + j] += g.data[j * m + i];
                    }
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                let gv = g.data[0];
                acc(grads, *a, |_| gv, n);
            }
            Op::MaxReduce(a, arg) => {
                grads[*a].data[*arg] += g.data[0];
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.clone();
                let n = g.len();
                acc(grads, *a, |i| g.data[i] * y.data[i], n);
            }
            Op::Log(a) => {
                let x = val(*a).clone();
                let n = g.len();
                acc(grads, *a, |i| g.data[i] / x.data[i], n);
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.clone();
                let n = g.len();
                acc(grads, *a, |i| g.data[i] * (1.0 - y.data[i] * y.data[i]), n);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.clone();
                let n = g.len();
                acc(grads, *a, |i| g.data[i] * y.data[i] * (1.0 - y.data[i]), n);
            }
            Op::Erf(a) => {
                let x = val(*a).clone();
                let n = g.len();
                acc(grads, *a, |i| g.data[i] * erf::erf_derivative(x.data[i]), n);
            }
            Op::Sqrt(a) => {
                let y = self.nodes[idx].value.clone();
                let n = g.len();
                acc(grads, *a, |i| g.data[i] * 0.5 / y.data[i], n);
            }
            Op::Softmax(a) => {
                let y = self.nodes[idx].value.clone();
                let n = g.len();
                let dot: f64 = (0..n).map(|i| g.data[i] * y.data[i]).sum();
                acc(grads, *a, |i| y.data[i] * (g.data[i] - dot), n);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    let gp = &mut grads[p];
                    for i in 0..n {
                        gp.data[i] += g.data[off + i];
                    }
                    off += n;
                }
            }
            Op::Slice { src, start } => {
                let gs = &mut grads[*src];
                for i in 0..g.len() {
                    gs.data[start + i] += g.data[i];
                }
            }
            Op::Broadcast(a) => {
                grads[*a].data[0] += g.data.iter().sum::<f64>();
            }
            Op::Clamp { src, lo, hi } => {
                let x = val(*src).clone();
                let n = g.len();
                acc(grads, *src, |i| {
                    if x.data[i] >= *lo && x.data[i] <= *hi {
                        g.data[i]
                    } else {
                        0.0
                    }
                }, n);
            }
            Op::Outer(c, r) => {
                let (tc, tr) = (val(*c).clone(), val(*r).clone());
                let (m, n) = (tc.len(), tr.len());
                {
                    let gc = &mut grads[*c];
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g.data[i * n + j] * tr.data[j];
                        }
                        gc.data[i] += s;
                    }
                }
                {
                    let gr = &mut grads[*r];
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += g.data[i * n + j] * tc.data[i];
                        }
                        gr.data[j] += s;
                    }
                }
            }
            Op::AddRowBroadcast(mat, row) => {
                let (m, n) = {
                    let t = val(*mat);
                    (t.shape[0], t.shape[1])
                };
                {
                    let gm = &mut grads[*mat];
                    for i in 0..m * n {
                        gm.data[i] += g.data[i];
                    }
                }
                {
                    let gr = &mut grads[*row];
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += g.data[i * n + j];
                        }
                        gr.data[j] += s;
                    }
                }
            }
            Op::Reshape(a) => {
                let ga = &mut grads[*a];
                for i in 0..g.len() {
                    ga.data[i] += g.data[i];
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

/// LSTM cell weights as tape variables: stacked gate maps ordered
/// input/forget/cell/output.
#[derive(Clone, Copy)]
pub struct LstmVars {
    /// 4H x input_dim
    pub w_ih: Var,
    /// 4H x H
    pub w_hh: Var,
    /// 4H
    pub bias: Var,
}

/// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, w: LstmVars) -> (Var, Var) {
    let hidden = tape.value(h).len();
    let from_x = tape.matmul(w.w_ih, x);
    let from_h = tape.matmul(w.w_hh, h);
    let pre = tape.add(from_x, from_h);
    let gates = tape.add(pre, w.bias);
    let i_raw = tape.slice(gates, 0, hidden);
    let f_raw = tape.slice(gates, hidden, hidden);
    let g_raw = tape.slice(gates, 2 * hidden, hidden);
    let o_raw = tape.slice(gates, 3 * hidden, hidden);
    let i = tape.sigmoid(i_raw);
    let f = tape.sigmoid(f_raw);
    let g = tape.tanh(g_raw);
    let o = tape.sigmoid(o_raw);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tanh_c = tape.tanh(c_next);
    let h_next = tape.mul(o, tanh_c);
    (h_next, c_next)
}

/// Max relative error between reverse-mode and central-difference gradients
/// of a scalar function of one tensor. Denominator: max(|g|, 1e-6) with g the
/// reverse-mode gradient element.
pub fn check_gradient(
    f: impl Fn(&mut Tape, Var) -> Var,
    x: &Tensor,
    h: f64,
) -> Result<f64> {
    check_gradient_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Multi-input variant of [`check_gradient`].
pub fn check_gradient_multi(
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    xs: &[Tensor],
    h: f64,
) -> Result<f64> {
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&mut tape, &vars);
        tape.numeric_error()?;
        Ok(tape.value(y).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&mut tape, &vars);
    let grads = tape.backward(y)?;

    let mut max_rel: f64 = 0.0;
    let mut points = xs.to_vec();
    for (vi, var) in vars.iter().enumerate() {
        let g = grads.get(*var).clone();
        for i in 0..points[vi].len() {
            let orig = points[vi].data[i];
            points[vi].data_mut()[i] = orig + h;
            let fp = eval(&points)?;
            points[vi].data_mut()[i] = orig - h;
            let fm = eval(&points)?;
            points[vi].data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (g.data()[i] - fd).abs() / g.data()[i].abs().max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
