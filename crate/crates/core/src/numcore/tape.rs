//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive in creation order, so parents always
//! precede their children and a single reverse sweep visits each node once.
//! Values are computed eagerly; [`Tape::backward`] only propagates adjoints.

use super::kernels::{self, StdKind};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Affine(Var, Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    DivCol(Var, Var),
    MulCol(Var, Var),
    RowStd(Var, StdKind),
    RowPick(Var, Vec<usize>),
    FloorAt(Var, f64),
    LogSoftmax(Var),
    Exp(Var),
    LogMeanExp(Vec<Var>),
    SumRows(Var),
    Mean(Var),
    Sum(Var),
    Linear(Vec<(f64, Var)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every leaf after a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Copies `v`'s current value into a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = self.value(x).affine(self.value(w), self.value(b))?;
        Ok(self.push(value, Op::Affine(x, w, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        self.push(value, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    fn expect_column(&self, a: Var, col: Var, op: &'static str) -> Result<()> {
        let (ar, _) = self.value(a).shape();
        let cs = self.value(col).shape();
        if cs != (ar, 1) {
            return Err(Error::Dimension {
                op,
                left: self.value(a).shape(),
                right: cs,
            });
        }
        Ok(())
    }

    /// `a[n, c] / col[n]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.expect_column(a, col, "div_col")?;
        let mut value = self.value(a).clone();
        let divisors = self.value(col).as_slice().to_vec();
        for (r, d) in divisors.into_iter().enumerate() {
            for v in value.row_mut(r) {
                *v /= d;
            }
        }
        Ok(self.push(value, Op::DivCol(a, col)))
    }

    /// `a[n, c] * col[n]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.expect_column(a, col, "mul_col")?;
        let mut value = self.value(a).clone();
        let factors = self.value(col).as_slice().to_vec();
        for (r, f) in factors.into_iter().enumerate() {
            for v in value.row_mut(r) {
                *v *= f;
            }
        }
        Ok(self.push(value, Op::MulCol(a, col)))
    }

    /// Per-row standard deviation, `N×C -> N×1`. Needs `C >= 2`.
    pub fn row_std(&mut self, x: Var, kind: StdKind) -> Result<Var> {
        let m = self.value(x);
        if m.cols() < 2 {
            return Err(Error::contract(format!(
                "row standard deviation needs at least 2 columns, got {}",
                m.cols()
            )));
        }
        let value = Matrix::column(m.row_iter().map(|r| kernels::std_dev(r, kind)).collect());
        Ok(self.push(value, Op::RowStd(x, kind)))
    }

    fn row_pick_by(&mut self, x: Var, better: impl Fn(f64, f64) -> bool) -> Result<Var> {
        let m = self.value(x);
        if m.cols() == 0 {
            return Err(Error::contract("row extremum of an empty row"));
        }
        let mut idx = Vec::with_capacity(m.rows());
        let mut vals = Vec::with_capacity(m.rows());
        for row in m.row_iter() {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if better(v, row[best]) {
                    best = i;
                }
            }
            idx.push(best);
            vals.push(row[best]);
        }
        Ok(self.push(Matrix::column(vals), Op::RowPick(x, idx)))
    }

    /// Per-row maximum; the gradient goes to the first maximal entry.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        self.row_pick_by(x, |a, b| a > b)
    }

    /// Per-row minimum; the gradient goes to the first minimal entry.
    pub fn row_min(&mut self, x: Var) -> Result<Var> {
        self.row_pick_by(x, |a, b| a < b)
    }

    /// Entry `x[n, index[n]]` of each row, `N×C -> N×1`.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let m = self.value(x);
        if index.len() != m.rows() {
            return Err(Error::Dimension {
                op: "pick",
                left: m.shape(),
                right: (index.len(), 1),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= m.cols()) {
            return Err(Error::contract(format!(
                "column index {bad} out of range for {} columns",
                m.cols()
            )));
        }
        let vals = m.row_iter().zip(index).map(|(r, &i)| r[i]).collect();
        Ok(self.push(Matrix::column(vals), Op::RowPick(x, index.to_vec())))
    }

    /// Elementwise `max(x, floor)`; no gradient flows through floored entries.
    pub fn floor_at(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| if v > floor { v } else { floor });
        self.push(value, Op::FloorAt(x, floor))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut value = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            kernels::log_softmax_into(m.row(r), value.row_mut(r));
        }
        self.push(value, Op::LogSoftmax(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x))
    }

    /// Elementwise `ln((1/k) Σ_j exp(x_j))` over `k` equally shaped inputs.
    pub fn log_mean_exp(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::contract("log_mean_exp of an empty list"))?;
        let shape = self.value(first).shape();
        for &x in &xs[1..] {
            self.value(first).expect_same_shape(self.value(x), "log_mean_exp")?;
        }
        let mut value = Matrix::zeros(shape.0, shape.1);
        let mut buf = vec![0.0; xs.len()];
        for i in 0..value.len() {
            for (b, &x) in buf.iter_mut().zip(xs) {
                *b = self.value(x).as_slice()[i];
            }
            value.as_mut_slice()[i] = kernels::log_mean_exp(&buf);
        }
        Ok(self.push(value, Op::LogMeanExp(xs.to_vec())))
    }

    /// Row sums, `N×C -> N×1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let value = Matrix::column(self.value(x).row_iter().map(|r| r.iter().sum()).collect());
        self.push(value, Op::SumRows(x))
    }

    /// Mean of all entries, `-> 1×1`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        if m.is_empty() {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        Ok(self.push(value, Op::Mean(x)))
    }

    /// Sum of all entries, `-> 1×1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// `Σ w_j · x_j` over equally shaped terms.
    pub fn linear(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let &(w0, first) = terms
            .first()
            .ok_or_else(|| Error::contract("linear combination of no terms"))?;
        let mut value = self.value(first).map(|v| w0 * v);
        for &(w, x) in &terms[1..] {
            value = value.zip_map(self.value(x), "linear", |acc, v| acc + w * v)?;
        }
        Ok(self.push(value, Op::Linear(terms.to_vec())))
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got {}x{}",
                out_shape.0, out_shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        // Constants are not leaves; drop anything that reached them.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Affine(x, w, b) => {
                accumulate(grads, *x, g.matmul(&val(*w).transpose())?);
                accumulate(grads, *w, val(*x).transpose().matmul(g)?);
                let mut db = Matrix::zeros(1, g.cols());
                for row in g.row_iter() {
                    for (d, &v) in db.as_mut_slice().iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul(&val(*b).transpose())?);
                accumulate(grads, *b, val(*a).transpose().matmul(g)?);
            }
            Op::Relu(x) => {
                let d = val(*x).zip_map(g, "relu", |x, g| if x > 0.0 { g } else { 0.0 })?;
                accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), "mul", |g, y| g * y)?);
                accumulate(grads, *b, g.zip_map(val(*a), "mul", |g, x| g * x)?);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::DivCol(a, col) => {
                let av = val(*a);
                let cv = val(*col).as_slice();
                let mut da = g.clone();
                let mut dc = Matrix::zeros(cv.len(), 1);
                for (r, &d) in cv.iter().enumerate() {
                    let mut acc = 0.0;
                    for ((x, gd), &ai) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(av.row(r)) {
                        *x = gd / d;
                        acc += gd * ai;
                    }
                    dc.as_mut_slice()[r] = -acc / (d * d);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *col, dc);
            }
            Op::MulCol(a, col) => {
                let av = val(*a);
                let cv = val(*col).as_slice();
                let mut da = g.clone();
                let mut dc = Matrix::zeros(cv.len(), 1);
                for (r, &f) in cv.iter().enumerate() {
                    let mut acc = 0.0;
                    for ((x, gd), &ai) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(av.row(r)) {
                        *x = gd * f;
                        acc += gd * ai;
                    }
                    dc.as_mut_slice()[r] = acc;
                }
                accumulate(grads, *a, da);
                accumulate(grads, *col, dc);
            }
            Op::RowStd(x, kind) => {
                // d sigma / d x_c = (x_c - mu) / (divisor * sigma), zero when sigma = 0.
                let xv = val(*x);
                let sig = node.value.as_slice();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &s) in sig.iter().enumerate() {
                    if s == 0.0 {
                        continue;
                    }
                    let row = xv.row(r);
                    let mu = kernels::mean(row);
                    let scale = g.as_slice()[r] / (kind.divisor(row.len()) * s);
                    for (d, &v) in dx.row_mut(r).iter_mut().zip(row) {
                        *d = (v - mu) * scale;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::RowPick(x, idx) => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for (r, &i) in idx.iter().enumerate() {
                    dx.set(r, i, g.as_slice()[r]);
                }
                accumulate(grads, *x, dx);
            }
            Op::FloorAt(x, floor) => {
                let d = val(*x).zip_map(g, "floor_at", |x, g| if x > *floor { g } else { 0.0 })?;
                accumulate(grads, *x, d);
            }
            Op::LogSoftmax(x) => {
                // dx = g - softmax * rowsum(g)
                let y = &node.value;
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for (d, &ly) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
                        *d -= ly.exp() * gs;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Exp(x) => accumulate(grads, *x, g.zip_map(&node.value, "exp", |g, y| g * y)?),
            Op::LogMeanExp(xs) => {
                let k = xs.len() as f64;
                for &x in xs {
                    let xv = val(x);
                    let mut dx = g.clone();
                    for ((d, &xi), &yi) in dx
                        .as_mut_slice()
                        .iter_mut()
                        .zip(xv.as_slice())
                        .zip(node.value.as_slice())
                    {
                        *d *= (xi - yi).exp() / k;
                    }
                    accumulate(grads, x, dx);
                }
            }
            Op::SumRows(x) => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gv = g.as_slice()[r];
                    dx.row_mut(r).fill(gv);
                }
                accumulate(grads, *x, dx);
            }
            Op::Mean(x) => {
                let (rows, cols) = val(*x).shape();
                let gv = g.as_slice()[0] / (rows * cols) as f64;
                accumulate(grads, *x, Matrix::filled(rows, cols, gv));
            }
            Op::Sum(x) => {
                let (rows, cols) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(rows, cols, g.as_slice()[0]));
            }
            Op::Linear(terms) => {
                for &(w, x) in terms {
                    accumulate(grads, x, g.map(|v| w * v));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot => *slot = Some(d),
    }
}
