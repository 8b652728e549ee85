use super::special::{digamma, ln_gamma, trigamma};
use super::{sigmoid, softplus, Tensor};
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
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ScaleRows(Var, Var),
    DivRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softplus(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln { x: Var, floor: f64 },
    Sqrt(Var),
    Lgamma(Var),
    Digamma(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumRows(Var),
    Sum(Var),
    Transpose(Var),
    SliceCols { x: Var, start: usize, end: usize },
    Slice { x: Var, offset: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    t.dims2()
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

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let values = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.value(a));
        if self.shape(a).len() != 2 || self.value(bias).len() != n {
            return Err(Error::shape("add_bias", self.shape(a), self.shape(bias)));
        }
        let bv = self.value(bias).values();
        let mut out = self.value(a).values().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bv[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    /// `input · weight + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if si.len() != 2 || sw.len() != 2 || si[1] != sw[0] {
            return Err(Error::shape("linear", si, sw));
        }
        if sb.len() != 1 || sb[0] != sw[1] {
            return Err(Error::shape("linear", sw, sb));
        }
        let y = self.matmul(input, weight)?;
        self.add_bias(y, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn row_op(
        &mut self,
        name: &'static str,
        a: Var,
        s: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (m, n) = rows_cols(self.value(a));
        if self.shape(a).len() != 2 || self.value(s).len() != m {
            return Err(Error::shape(name, self.shape(a), self.shape(s)));
        }
        let sv = self.value(s).values();
        let av = self.value(a).values();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(f(av[i * n + j], sv[i]));
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, s]);
        Ok(self.push(value, op, rg))
    }

    /// Multiplies row `i` of `[m×n]` by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        self.row_op("scale_rows", a, s, Op::ScaleRows(a, s), |x, y| x * y)
    }

    /// Divides row `i` of `[m×n]` by `s[i]`.
    pub fn div_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        self.row_op("div_rows", a, s, Op::DivRows(a, s), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::Ln { x, floor }, |v| v.max(floor).ln())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn lgamma(&mut self, x: Var) -> Var {
        self.unary(x, Op::Lgamma(x), ln_gamma)
    }

    pub fn digamma(&mut self, x: Var) -> Var {
        self.unary(x, Op::Digamma(x), digamma)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    /// Stable softmax along the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.value(x));
        let xv = self.value(x).values();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(super::softmax_slice(&xv[i * n..(i + 1) * n]));
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Stable log-softmax along the last axis.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.value(x));
        let xv = self.value(x).values();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::LogSoftmaxRows(x), rg))
    }

    /// `[m×n] → [m]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (m, n) = rows_cols(self.value(x));
        let xv = self.value(x).values();
        let out = (0..m).map(|i| xv[i * n..(i + 1) * n].iter().sum()).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::vector(out), Op::SumRows(x), rg)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let (m, n) = rows_cols(self.value(x));
        let xv = self.value(x).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    /// Columns `start..end` of an `[m×n]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = rows_cols(self.value(x));
        if self.shape(x).len() != 2 || start >= end || end > n {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, end]));
        }
        let xv = self.value(x).values();
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + end]);
        }
        let value = Tensor::new(vec![m, w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start, end }, rg))
    }

    /// Contiguous flat range `offset..offset + product(shape)` viewed with `shape`.
    pub fn slice(&mut self, x: Var, offset: usize, shape: Vec<usize>) -> Result<Var> {
        let len: usize = shape.iter().product();
        if offset + len > self.value(x).len() {
            return Err(Error::shape("slice", self.shape(x), &shape));
        }
        let values = self.value(x).values()[offset..offset + len].to_vec();
        let value = Tensor::new(shape, values)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, offset }, rg))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let ss = self.sum_rows(sq);
        let norm = self.sqrt(ss);
        self.div_rows(x, norm)
    }

    /// Reverse pass from a scalar `loss`. Leaves that require gradients also
    /// get their `Tensor::grad` populated.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if let Some(g) = g {
                    node.value.set_grad(g.clone())?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.values();
        let val = |v: Var| self.nodes[v.0].value.values();
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let elementwise = |x: Var, d: &dyn Fn(usize) -> f64| -> Vec<f64> {
            (0..val(x).len()).map(|i| g[i] * d(i)).collect()
        };

        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(&self.nodes[a.0].value);
                let n = rows_cols(&node.value).1;
                if needs(a) {
                    // dA = dC · Bᵀ
                    let bv = val(b);
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    acc(a, da);
                }
                if needs(b) {
                    // dB = Aᵀ · dC
                    let av = val(a);
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                    acc(b, db);
                }
            }
            Op::AddBias(a, b) => {
                let (m, n) = rows_cols(&node.value);
                acc(a, g.to_vec());
                if needs(b) {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g[i * n + j];
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
                acc(b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, elementwise(a, &|i| bv[i]));
                acc(b, elementwise(b, &|i| av[i]));
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, elementwise(a, &|i| 1.0 / bv[i]));
                acc(b, elementwise(b, &|i| -av[i] / (bv[i] * bv[i])));
            }
            Op::ScaleRows(a, s) | Op::DivRows(a, s) => {
                let divide = matches!(node.op, Op::DivRows(..));
                let (m, n) = rows_cols(&node.value);
                let (av, sv) = (val(a), val(s));
                if needs(a) {
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let f = if divide { 1.0 / sv[i] } else { sv[i] };
                        for j in 0..n {
                            da[i * n + j] = g[i * n + j] * f;
                        }
                    }
                    acc(a, da);
                }
                if needs(s) {
                    let ds = (0..m)
                        .map(|i| {
                            let dot: f64 = (0..n).map(|j| g[i * n + j] * av[i * n + j]).sum();
                            if divide {
                                -dot / (sv[i] * sv[i])
                            } else {
                                dot
                            }
                        })
                        .collect();
                    acc(s, ds);
                }
            }
            Op::Scale(x, s) => acc(x, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(x) => acc(x, g.to_vec()),
            Op::Softplus(x) => {
                let xv = val(x);
                acc(x, elementwise(x, &|i| sigmoid(xv[i])));
            }
            Op::Tanh(x) => acc(x, elementwise(x, &|i| 1.0 - y[i] * y[i])),
            Op::Relu(x) => {
                let xv = val(x);
                acc(x, elementwise(x, &|i| if xv[i] > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Exp(x) => acc(x, elementwise(x, &|i| y[i])),
            Op::Ln { x, floor } => {
                let xv = val(x);
                acc(
                    x,
                    elementwise(x, &|i| if xv[i] > floor { 1.0 / xv[i] } else { 0.0 }),
                );
            }
            Op::Sqrt(x) => acc(x, elementwise(x, &|i| 0.5 / y[i])),
            Op::Lgamma(x) => {
                let xv = val(x);
                acc(x, elementwise(x, &|i| digamma(xv[i])));
            }
            Op::Digamma(x) => {
                let xv = val(x);
                acc(x, elementwise(x, &|i| trigamma(xv[i])));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(x);
                acc(
                    x,
                    elementwise(x, &|i| {
                        if xv[i] >= lo && xv[i] <= hi {
                            1.0
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = rows_cols(&node.value);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let dot: f64 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        dx[j] = y[j] * (g[j] - dot);
                    }
                }
                acc(x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let (m, n) = rows_cols(&node.value);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let total: f64 = g[r.clone()].iter().sum();
                    for j in r {
                        dx[j] = g[j] - y[j].exp() * total;
                    }
                }
                acc(x, dx);
            }
            Op::SumRows(x) => {
                let (m, n) = rows_cols(&self.nodes[x.0].value);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n..(i + 1) * n].iter_mut().for_each(|d| *d = g[i]);
                }
                acc(x, dx);
            }
            Op::Sum(x) => acc(x, vec![g[0]; val(x).len()]),
            Op::Transpose(x) => {
                let (m, n) = rows_cols(&self.nodes[x.0].value);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                acc(x, dx);
            }
            Op::SliceCols { x, start, end } => {
                let (m, n) = rows_cols(&self.nodes[x.0].value);
                let w = end - start;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(x, dx);
            }
            Op::Slice { x, offset } => {
                let mut dx = vec![0.0; val(x).len()];
                dx[offset..offset + g.len()].copy_from_slice(g);
                acc(x, dx);
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += x * bv;
            }
        }
    }
    out
}
