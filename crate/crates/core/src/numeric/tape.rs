//! Eager reverse-mode tape.
//!
//! Every kernel evaluates immediately and records its inputs. A tape lives
//! for exactly one forward pass; [`Tape::backward`] walks it in reverse and
//! accumulates parameter gradients into a [`ParamStore`].

use crate::error::{ensure, Error, Result};

use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{ParamId, ParamStore, Precision, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMean {
        msg: Var,
        weight: Var,
        target: Vec<usize>,
        counts: Vec<usize>,
    },
    Pick(Var, Vec<usize>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Gate {
        x: Var,
        log_alpha: Var,
        beta: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
    precision: Precision,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::Fp64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), precision }
    }

    pub fn precision(&self) -> Precision {
        self.precision
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, name: &str, mut value: Tensor, op: Op) -> Result<Var> {
        if self.precision == Precision::Fp32 {
            let p = self.precision;
            value.data_mut().iter_mut().for_each(|x| *x = p.round(*x));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (no gradient is propagated out of it).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// Records a parameter. Repeated calls for the same id return the same
    /// handle, so all uses share one gradient slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.params.get(id.0) {
            return Ok(*v);
        }
        let v = self.push("param", store.value(id).clone(), Op::Param(id))?;
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        Ok(v)
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [n] => Ok((1, *n)),
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Dimension(format!("{what}: expected 1-D or 2-D operand, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        ensure!(
            self.value(a).is_matrix() && self.value(b).is_matrix(),
            Dimension,
            "matmul needs matrices, got {:?} and {:?}",
            self.shape(a),
            self.shape(b)
        );
        ensure!(k == k2, Dimension, "matmul inner extents {k} and {k2} differ");
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        ensure!(
            self.shape(a) == self.shape(b),
            Dimension,
            "{name}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, Tensor::new(shape, data)?, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `row` (length n) to every row of the `m×n` matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        ensure!(
            self.value(row).len() == n,
            Dimension,
            "add_row: row of length {} against {n} columns",
            self.value(row).len()
        );
        let r = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, y) in data[i * n..(i + 1) * n].iter_mut().zip(&r) {
                *x += y;
            }
        }
        let shape = self.shape(a).to_vec();
        self.push("add_row", Tensor::new(shape, data)?, Op::AddRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]`; `col` holds one value per row.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mul_col")?;
        ensure!(
            self.value(col).len() == m,
            Dimension,
            "mul_col: {} scales against {m} rows",
            self.value(col).len()
        );
        let c = self.value(col).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for (i, ci) in c.iter().enumerate() {
            data[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= ci);
        }
        let shape = self.shape(a).to_vec();
        self.push("mul_col", Tensor::new(shape, data)?, Op::MulCol(a, col))
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.item(s)?;
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * k).collect();
        let shape = t.shape().to_vec();
        self.push("mul_scalar", Tensor::new(shape, data)?, Op::MulScalar(a, s))
    }

    fn map(&mut self, a: Var, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let shape = t.shape().to_vec();
        self.push(name, Tensor::new(shape, data)?, op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, "scale", |x| x * k, Op::Scale(a, k))
    }

    /// `a + k` elementwise.
    pub fn shift(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, "shift", |x| x + k, Op::Shift(a))
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.shift(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, "relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|x| **x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        self.map(a, "log", f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, "exp", f64::exp, Op::Exp(a))
    }

    /// `a^p` elementwise; `a` must be nonnegative.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|x| **x < 0.0) {
            return Err(Error::Domain(format!("pow of negative value {bad}")));
        }
        self.map(a, "pow", |x| x.powf(p), Op::Pow(a, p))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, "clamp", |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Softmax along the last axis with per-row max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut data = t.data().to_vec();
        if n > 0 {
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
        }
        let shape = t.shape().to_vec();
        self.push("softmax", Tensor::new(shape, data)?, Op::Softmax(a))
    }

    /// Concatenation along `axis`. All parts share rank and every extent
    /// except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat of zero parts");
        let first = self.shape(parts[0]).to_vec();
        ensure!(axis < first.len(), Dimension, "concat axis {axis} out of range for rank {}", first.len());
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            ensure!(s.len() == first.len(), Dimension, "concat rank mismatch: {s:?} vs {first:?}");
            for (d, (x, y)) in s.iter().zip(&first).enumerate() {
                ensure!(d == axis || x == y, Dimension, "concat extent mismatch on axis {d}: {s:?} vs {first:?}");
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = axis_total;
        self.push("concat", Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis))
    }

    /// Selects rows of a matrix (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a, "gather_rows")?;
        ensure!(self.value(a).is_matrix(), Dimension, "gather_rows needs a matrix");
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            ensure!(i < m, Index, "gather_rows index {i} >= {m}");
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        self.push("gather_rows", Tensor::new(vec![idx.len(), n], data)?, Op::GatherRows(a, idx.to_vec()))
    }

    /// Weighted per-segment mean: output row `t` is
    /// `(1/c_t) Σ_{k: target[k]=t, w_k≠0} w_k · msg_k`, where `c_t` counts
    /// the contributing rows. Rows with zero weight are treated as absent,
    /// and an empty segment yields a zero row.
    pub fn segment_mean(&mut self, msg: Var, weight: Var, target: &[usize], n_out: usize) -> Result<Var> {
        let (m, n) = self.dims2(msg, "segment_mean")?;
        ensure!(target.len() == m, Dimension, "segment_mean: {} targets for {m} rows", target.len());
        ensure!(self.value(weight).len() == m, Dimension, "segment_mean: {} weights for {m} rows", self.value(weight).len());
        let w = self.value(weight).data();
        let mut counts = vec![0usize; n_out];
        for (k, &t) in target.iter().enumerate() {
            ensure!(t < n_out, Index, "segment_mean target {t} >= {n_out}");
            if w[k] != 0.0 {
                counts[t] += 1;
            }
        }
        let src = self.value(msg).data();
        let mut data = vec![0.0; n_out * n];
        for (k, &t) in target.iter().enumerate() {
            if w[k] == 0.0 {
                continue;
            }
            let s = w[k] / counts[t] as f64;
            for (o, x) in data[t * n..(t + 1) * n].iter_mut().zip(&src[k * n..(k + 1) * n]) {
                *o += s * x;
            }
        }
        self.push(
            "segment_mean",
            Tensor::new(vec![n_out, n], data)?,
            Op::SegmentMean { msg, weight, target: target.to_vec(), counts },
        )
    }

    /// Picks `a[r, idx[r]]` for each row; result is `m×1`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a, "pick")?;
        ensure!(idx.len() == m, Dimension, "pick: {} indices for {m} rows", idx.len());
        let t = self.value(a).data();
        let mut data = Vec::with_capacity(m);
        for (r, &c) in idx.iter().enumerate() {
            ensure!(c < n, Index, "pick column {c} >= {n}");
            data.push(t[r * n + c]);
        }
        self.push("pick", Tensor::new(vec![m, 1], data)?, Op::Pick(a, idx.to_vec()))
    }

    /// Row sums of an `m×n` matrix; result `m×1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "sum_rows")?;
        let t = self.value(a).data();
        let data = if n == 0 { vec![0.0; m] } else { t.chunks(n).map(|r| r.iter().sum()).collect() };
        self.push("sum_rows", Tensor::new(vec![m, 1], data)?, Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements; an empty tensor has mean 0.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = if t.is_empty() { 0.0 } else { t.data().iter().sum::<f64>() / t.len() as f64 };
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Piecewise-linear confidence gate applied elementwise, with
    /// `alpha = exp(log_alpha)`.
    pub fn gate(&mut self, x: Var, log_alpha: Var, beta: Var) -> Result<Var> {
        let alpha = self.item(log_alpha)?.exp();
        let b = self.item(beta)?;
        self.map(x, "gate", |v| gate_value(v, alpha, b), Op::Gate { x, log_alpha, beta })
    }

    /// Which linear piece every ReLU, clamp and gate input falls in, in
    /// recording order. Two evaluations with equal regions are on the same
    /// smooth piece of the function.
    pub fn regions(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data().iter().map(|&x| u8::from(x > 0.0))),
                Op::Clamp(a, lo, hi) => out.extend(self.value(*a).data().iter().map(|&x| u8::from(x >= *lo) + u8::from(x > *hi))),
                Op::Gate { x, log_alpha, beta } => {
                    let b = self.value(*beta).data()[0];
                    let top = b + 1.0 / self.value(*log_alpha).data()[0].exp();
                    out.extend(self.value(*x).data().iter().map(|&v| u8::from(v > b) + u8::from(v >= top)));
                }
                _ => {}
            }
        }
        out
    }

    /// Reverse sweep from the scalar `root`. Parameter gradients are added
    /// to `store` (not overwritten).
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        ensure!(self.value(root).len() == 1, Contract, "backward from non-scalar of shape {:?}", self.shape(root));
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) -> Result<()> {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                for (acc, d) in p.grad.data_mut().iter_mut().zip(g) {
                    *acc += d;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a, "")?;
                let (_, n) = self.dims2(*b, "")?;
                let ga = matmul_nt(g, self.value(*b).data(), m, n, k);
                let gb = matmul_tn(self.value(*a).data(), g, m, k, n);
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga: Vec<f64> = g.iter().zip(bv).map(|(d, x)| d * x).collect();
                let gb: Vec<f64> = g.iter().zip(av).map(|(d, x)| d * x).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g);
                let n = self.value(*row).len();
                let mut gr = vec![0.0; n];
                if n > 0 {
                    for chunk in g.chunks(n) {
                        for (acc, d) in gr.iter_mut().zip(chunk) {
                            *acc += d;
                        }
                    }
                }
                accumulate(grads, *row, &gr);
            }
            Op::MulCol(a, col) => {
                let (m, n) = self.dims2(*a, "")?;
                let c = self.value(*col).data();
                let av = self.value(*a).data();
                let mut ga = vec![0.0; m * n];
                let mut gc = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g[i * n + j] * c[i];
                        gc[i] += g[i * n + j] * av[i * n + j];
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *col, &gc);
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).data()[0];
                let av = self.value(*a).data();
                let ga: Vec<f64> = g.iter().map(|d| d * k).collect();
                let gs: f64 = g.iter().zip(av).map(|(d, x)| d * x).sum();
                accumulate(grads, *a, &ga);
                accumulate(grads, *s, &[gs]);
            }
            Op::Scale(a, k) => {
                let ga: Vec<f64> = g.iter().map(|d| d * k).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Shift(a) => accumulate(grads, *a, g),
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(d, v)| d / v).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g.iter().zip(y).map(|(d, v)| d * v).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Pow(a, p) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(d, v)| if *p == 0.0 { 0.0 } else { d * p * v.powf(p - 1.0) })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(d, v)| if *v >= *lo && *v <= *hi { *d } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                let mut ga = vec![0.0; g.len()];
                if n > 0 {
                    for ((gy, yy), out) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = gy.iter().zip(yy).map(|(d, s)| d * s).sum();
                        for ((o, d), s) in out.iter_mut().zip(gy).zip(yy) {
                            *o = s * (d - dot);
                        }
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    let mut gp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        gp.extend_from_slice(&g[o * row + offset..o * row + offset + chunk]);
                    }
                    accumulate(grads, p, &gp);
                    offset += chunk;
                }
            }
            Op::GatherRows(a, idx) => {
                let (m, n) = self.dims2(*a, "")?;
                let mut ga = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for (acc, d) in ga[i * n..(i + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                        *acc += d;
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::SegmentMean { msg, weight, target, counts } => {
                let (m, n) = self.dims2(*msg, "")?;
                let w = self.value(*weight).data();
                let src = self.value(*msg).data();
                let mut gm = vec![0.0; m * n];
                let mut gw = vec![0.0; m];
                for (k, &t) in target.iter().enumerate() {
                    if w[k] == 0.0 {
                        continue;
                    }
                    let inv = 1.0 / counts[t] as f64;
                    let gt = &g[t * n..(t + 1) * n];
                    let mut dot = 0.0;
                    for j in 0..n {
                        gm[k * n + j] = gt[j] * w[k] * inv;
                        dot += gt[j] * src[k * n + j];
                    }
                    gw[k] = dot * inv;
                }
                accumulate(grads, *msg, &gm);
                accumulate(grads, *weight, &gw);
            }
            Op::Pick(a, idx) => {
                let (m, n) = self.dims2(*a, "")?;
                let mut ga = vec![0.0; m * n];
                for (r, &c) in idx.iter().enumerate() {
                    ga[r * n + c] = g[r];
                }
                accumulate(grads, *a, &ga);
            }
            Op::SumRows(a) => {
                let (m, n) = self.dims2(*a, "")?;
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = g[i]);
                }
                accumulate(grads, *a, &ga);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &ga);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                if n > 0 {
                    let ga = vec![g[0] / n as f64; n];
                    accumulate(grads, *a, &ga);
                }
            }
            Op::Gate { x, log_alpha, beta } => {
                let alpha = self.value(*log_alpha).data()[0].exp();
                let b = self.value(*beta).data()[0];
                let xv = self.value(*x).data();
                let mut gx = vec![0.0; xv.len()];
                let mut glog = 0.0;
                let mut gb = 0.0;
                for (i, (&v, &d)) in xv.iter().zip(g).enumerate() {
                    // one-sided derivative of the linear segment at both kinks
                    if v >= b && v <= 1.0 / alpha + b {
                        gx[i] = d * alpha;
                        glog += d * alpha * (v - b);
                        gb -= d * alpha;
                    }
                }
                accumulate(grads, *x, &gx);
                accumulate(grads, *log_alpha, &[glog]);
                accumulate(grads, *beta, &[gb]);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `T(x)`: 0 at or below `beta`, 1 at or above `1/alpha + beta`, linear
/// in between.
#[inline]
pub fn gate_value(x: f64, alpha: f64, beta: f64) -> f64 {
    if x <= beta {
        0.0
    } else if x >= 1.0 / alpha + beta {
        1.0
    } else {
        alpha * x - alpha * beta
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
