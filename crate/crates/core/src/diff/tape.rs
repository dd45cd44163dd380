//! Operation trace and reverse-mode differentiation.

use super::scalar::Scalar;
use super::tensor::{self, Tensor};
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
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Transpose(Var),
    AddRow(Var, Var),
    CrossEntropy(Var, usize),
    Sum(Var),
    Index(Var, usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Topologically ordered record of a computation: every node's parents
/// precede it, so the trace is acyclic by construction.
#[derive(Clone, Debug, Default)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Result<Tensor<T>>, op: Op, name: &'static str) -> Result<Var> {
        let value = value?.check_finite(name)?;
        Ok(self.push(value, op))
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes.get(v.0).map(|n| &n.op), Some(Op::Leaf))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b));
        self.record(v, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b));
        self.record(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b));
        self.record(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b));
        self.record(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = T::from_f64(c);
        let v = Ok(self.value(a).map(|x| x * k));
        self.record(v, Op::Scale(a, c), "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = Ok(self.value(a).map(T::sigmoid));
        self.record(v, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = Ok(self.value(a).map(T::tanh));
        self.record(v, Op::Tanh(a), "tanh")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::softmax(self.value(a));
        self.record(v, Op::Softmax(a), "softmax")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat(&refs);
        self.record(v, Op::Concat(parts.to_vec()), "concat")
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = tensor::slice(self.value(a), start, len);
        self.record(v, Op::Slice(a, start), "slice")
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rank() != 2 || i >= m.rows() {
            return Err(Error::Shape(format!("row {i} of {:?}", m.shape())));
        }
        let v = Ok(Tensor::vector(m.row(i).to_vec()));
        self.record(v, Op::Row(a, i), "row")
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let width = rows.first().map(|&r| self.value(r).len()).unwrap_or(0);
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != width {
                return Err(Error::Shape(format!("stack_rows: row shape {:?}, width {width}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows.len(), width, data);
        self.record(v, Op::StackRows(rows.to_vec()), "stack_rows")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = tensor::transpose(self.value(a));
        self.record(v, Op::Transpose(a), "transpose")
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.rank() != 2 || vt.rank() != 1 || mt.cols() != vt.len() {
            return Err(Error::Shape(format!("add_row: {:?} + {:?}", mt.shape(), vt.shape())));
        }
        let c = mt.cols();
        let mut out = mt.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(vt.data()) {
                *o += b;
            }
        }
        self.record(Ok(out), Op::AddRow(m, v), "add_row")
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = tensor::cross_entropy(self.value(logits), target);
        self.record(v, Op::CrossEntropy(logits, target), "cross_entropy")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let mut acc = T::zero();
        for &x in self.value(a).data() {
            acc += x;
        }
        self.record(Ok(Tensor::scalar(acc)), Op::Sum(a), "sum")
    }

    /// Element `i` of a vector as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || i >= t.len() {
            return Err(Error::Shape(format!("index {i} of {:?}", t.shape())));
        }
        let v = Ok(Tensor::scalar(t.data()[i]));
        self.record(v, Op::Index(a, i), "index")
    }
}

fn accumulate<T: Scalar>(
    adj: &mut [Option<Tensor<T>>],
    shapes: &[&[usize]],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    let slot = adj[v.0].get_or_insert_with(|| Tensor::zeros(shapes[v.0]));
    f(slot.data_mut());
}

/// Exact reverse-mode derivatives of the scalar `output` with respect to
/// each leaf in `wrt`.
pub fn gradient<T: Scalar>(tape: &Tape<T>, output: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
    if output.0 >= tape.len() {
        return Err(Error::Autodiff(format!("output node {} not on the tape", output.0)));
    }
    if !tape.value(output).is_scalar() {
        return Err(Error::Autodiff(format!(
            "output must be scalar, has shape {:?}",
            tape.value(output).shape()
        )));
    }
    for &w in wrt {
        if !tape.is_leaf(w) {
            return Err(Error::Autodiff(format!("node {} is not a differentiable leaf of this tape", w.0)));
        }
    }

    let shapes: Vec<&[usize]> = tape.nodes.iter().map(|n| n.value.shape()).collect();
    let mut adj: Vec<Option<Tensor<T>>> = vec![None; tape.len()];
    adj[output.0] = Some(Tensor::new(shapes[output.0].to_vec(), vec![T::one()])?);

    for idx in (0..=output.0).rev() {
        let Some(g) = adj[idx].take() else { continue };
        let node = &tape.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (tape.value(*a), tape.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.rank() == 1 { 1 } else { bv.shape()[1] };
                // dA = G Bᵀ
                accumulate(&mut adj, &shapes, *a, |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc += gd[i * n + j] * bv.data()[p * n + j];
                            }
                            da[i * k + p] += acc;
                        }
                    }
                });
                // dB = Aᵀ G
                accumulate(&mut adj, &shapes, *b, |db| {
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += aip * gd[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                accumulate(&mut adj, &shapes, *a, |d| add_into(d, gd));
                accumulate(&mut adj, &shapes, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                accumulate(&mut adj, &shapes, *a, |d| add_into(d, gd));
                accumulate(&mut adj, &shapes, *b, |d| {
                    for (x, &y) in d.iter_mut().zip(gd) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (tape.value(*a).data(), tape.value(*b).data());
                accumulate(&mut adj, &shapes, *a, |d| {
                    for ((x, &gv), &y) in d.iter_mut().zip(gd).zip(bv) {
                        *x += gv * y;
                    }
                });
                accumulate(&mut adj, &shapes, *b, |d| {
                    for ((x, &gv), &y) in d.iter_mut().zip(gd).zip(av) {
                        *x += gv * y;
                    }
                });
            }
            Op::Scale(a, c) => {
                let k = T::from_f64(*c);
                accumulate(&mut adj, &shapes, *a, |d| {
                    for (x, &gv) in d.iter_mut().zip(gd) {
                        *x += gv * k;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                accumulate(&mut adj, &shapes, *a, |d| {
                    for ((x, &gv), &s) in d.iter_mut().zip(gd).zip(y) {
                        *x += gv * s * (T::one() - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                accumulate(&mut adj, &shapes, *a, |d| {
                    for ((x, &gv), &t) in d.iter_mut().zip(gd).zip(y) {
                        *x += gv * (T::one() - t * t);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                accumulate(&mut adj, &shapes, *a, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                        let mut dot = T::zero();
                        for (&gv, &yv) in gr.iter().zip(yr) {
                            dot += gv * yv;
                        }
                        for ((x, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *x += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = shapes[p.0].iter().product::<usize>();
                    accumulate(&mut adj, &shapes, *p, |d| add_into(d, &gd[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Slice(a, start) => {
                let start = *start;
                accumulate(&mut adj, &shapes, *a, |d| add_into(&mut d[start..start + gd.len()], gd));
            }
            Op::Row(a, i) => {
                let c = gd.len();
                let i = *i;
                accumulate(&mut adj, &shapes, *a, |d| add_into(&mut d[i * c..(i + 1) * c], gd));
            }
            Op::StackRows(rows) => {
                let c = node.value.cols();
                for (r, chunk) in rows.iter().zip(gd.chunks(c)) {
                    accumulate(&mut adj, &shapes, *r, |d| add_into(d, chunk));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (shapes[a.0][0], shapes[a.0][1]);
                accumulate(&mut adj, &shapes, *a, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += gd[j * m + i];
                        }
                    }
                });
            }
            Op::AddRow(m, v) => {
                accumulate(&mut adj, &shapes, *m, |d| add_into(d, gd));
                let c = shapes[v.0][0];
                accumulate(&mut adj, &shapes, *v, |d| {
                    for chunk in gd.chunks(c) {
                        add_into(d, chunk);
                    }
                });
            }
            Op::CrossEntropy(z, target) => {
                let p = tensor::softmax(tape.value(*z))?;
                let g0 = gd[0];
                let target = *target;
                accumulate(&mut adj, &shapes, *z, |d| {
                    for (i, (x, &pi)) in d.iter_mut().zip(p.data()).enumerate() {
                        let onehot = if i == target { T::one() } else { T::zero() };
                        *x += g0 * (pi - onehot);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                accumulate(&mut adj, &shapes, *a, |d| {
                    for x in d.iter_mut() {
                        *x += g0;
                    }
                });
            }
            Op::Index(a, i) => {
                let i = *i;
                accumulate(&mut adj, &shapes, *a, |d| d[i] += gd[0]);
            }
        }
        // Leaves keep their adjoint for collection below.
        if matches!(node.op, Op::Leaf) {
            adj[idx] = Some(g);
        }
    }

    Ok(wrt
        .iter()
        .map(|w| adj[w.0].clone().unwrap_or_else(|| Tensor::zeros(shapes[w.0])))
        .collect())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
