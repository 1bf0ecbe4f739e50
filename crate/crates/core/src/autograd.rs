//! Dense row-major matrices and a reverse-mode tape over them.
//!
//! Everything runs in `f64`. A [`Tape`] borrows a [`ParamStore`]; parameters
//! enter the graph as leaves without being copied, and [`Tape::backward`]
//! returns one gradient slot per parameter.

use std::collections::BTreeMap;

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "Mat::from_vec: shape/data mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "Mat::from_rows: ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Mat::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul: inner dims differ");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self × otherᵀ`
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t: inner dims differ");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `selfᵀ × other`
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul: inner dims differ");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "scalar() on non-1x1 matrix");
        self.data[0]
    }

    /// Xavier/Glorot uniform initialization.
    pub fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Mat { rows, cols, data }
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    Pick(Var, Vec<usize>),
    Transpose(Var),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(m)) => m,
            _ => unreachable!("non-param node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a × bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise op: shape mismatch");
        Mat {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x / y);
        self.push(out, Op::Div(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, f64::min);
        self.push(out, Op::Min(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, f64::max);
        self.push(out, Op::Max(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows, 1, "add_row: bias must be a single row");
        assert_eq!(x.cols, r.cols, "add_row: width mismatch");
        let mut out = x.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    /// `s - a`
    pub fn rsub_scalar(&mut self, s: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise softmax. `mask` (same shape, `true` = keep) zeroes excluded
    /// entries; a fully masked row produces zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let x = self.value(a);
        if let Some(m) = mask {
            assert_eq!(m.len(), x.data.len(), "softmax mask shape mismatch");
        }
        let mut out = Mat::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let keep = |c: usize| mask.is_none_or(|m| m[r * x.cols + c]);
            let row = x.row(r);
            let mut hi = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if keep(c) && v > hi {
                    hi = v;
                }
            }
            if hi == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            let o = out.row_mut(r);
            for (c, &v) in row.iter().enumerate() {
                if keep(c) {
                    let e = (v - hi).exp();
                    o[c] = e;
                    total += e;
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            let row = out.row_mut(r);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = hi + row.iter().map(|v| (v - hi).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Per-row layer normalization with learned `1 × cols` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, xv.cols), "layer_norm gamma shape");
        assert_eq!(b.shape(), (1, xv.cols), "layer_norm beta shape");
        let n = xv.cols as f64;
        let mut xhat = Mat::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std.push(is);
            for c in 0..xv.cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data[c] + b.data[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows: width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat { rows, cols, data }, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols: height mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.rows, "slice_rows out of range");
        let data = m.data[start * m.cols..(start + len) * m.cols].to_vec();
        let out = Mat {
            rows: len,
            cols: m.cols,
            data,
        };
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        assert!(start + len <= m.cols, "slice_cols out of range");
        let mut out = Mat::zeros(m.rows, len);
        for r in 0..m.rows {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Selects rows by index; `None` yields a zero row.
    pub fn gather_rows(&mut self, a: Var, idx: &[Option<usize>]) -> Var {
        let m = self.value(a);
        let mut out = Mat::zeros(idx.len(), m.cols);
        for (i, src) in idx.iter().enumerate() {
            if let Some(s) = *src {
                out.row_mut(i).copy_from_slice(m.row(s));
            }
        }
        self.push(out, Op::GatherRows(a, idx.to_vec()))
    }

    /// Column-wise maximum over rows, giving a `1 × cols` row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(m.rows > 0, "max_rows of empty matrix");
        let mut out = Mat::zeros(1, m.cols);
        let mut arg = vec![0usize; m.cols];
        for c in 0..m.cols {
            let mut best = m.get(0, c);
            for r in 1..m.rows {
                let v = m.get(r, c);
                if v > best {
                    best = v;
                    arg[c] = r;
                }
            }
            out.data[c] = best;
        }
        self.push(out, Op::MaxRows(a, arg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Picks element `(r, idx[r])` from every row, giving a column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = self.value(a);
        assert_eq!(idx.len(), m.rows, "pick: one index per row");
        let data = idx.iter().enumerate().map(|(r, &c)| m.get(r, c)).collect();
        self.push(Mat::from_vec(m.rows, 1, data), Op::Pick(a, idx.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Back-propagates from a scalar node. Returns one gradient slot per
    /// parameter; parameters that did not take part in the graph get `None`.
    pub fn backward(&self, root: Var) -> Vec<Option<Mat>> {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        self.backward_seeded(&[(root, Mat::filled(1, 1, 1.0))])
    }

    pub fn backward_seeded(&self, seeds: &[(Var, Mat)]) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        let hi = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        for i in (0..=hi).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out: Vec<Option<Mat>> = vec![None; self.params.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                out[pid] = grads[v.0].take();
            }
        }
        out
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Const | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul_t(bv));
                accumulate(grads, *b, av.t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul(bv));
                accumulate(grads, *b, g.t_matmul(av));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, hadamard(g, bv));
                accumulate(grads, *b, hadamard(g, av));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = zip_map(g, bv, |gi, y| gi / y);
                let mut gb = zip_map(g, av, |gi, x| -gi * x);
                for (v, y) in gb.data.iter_mut().zip(&bv.data) {
                    *v /= y * y;
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Mat::zeros(g.rows, g.cols);
                let mut gb = Mat::zeros(g.rows, g.cols);
                for k in 0..g.data.len() {
                    let pick_a = if is_min {
                        av.data[k] <= bv.data[k]
                    } else {
                        av.data[k] >= bv.data[k]
                    };
                    if pick_a {
                        ga.data[k] = g.data[k];
                    } else {
                        gb.data[k] = g.data[k];
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, v) in gr.data.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, zip_map(g, av, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                let y = out.expect("sigmoid value");
                accumulate(grads, *a, zip_map(g, y, |gi, s| gi * s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let y = out.expect("tanh value");
                accumulate(grads, *a, zip_map(g, y, |gi, t| gi * (1.0 - t * t)));
            }
            Op::Ln(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, zip_map(g, av, |gi, x| gi / x));
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    zip_map(g, av, |gi, x| if x > *lo && x < *hi { gi } else { 0.0 }),
                );
            }
            Op::Softmax(a) => {
                let y = out.expect("softmax value");
                let mut gx = Mat::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, gx);
            }
            Op::LogSoftmax(a) => {
                let y = out.expect("log-softmax value");
                let mut gx = Mat::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let gr = g.row(r);
                    let total: f64 = gr.iter().sum();
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = gr[c] - y.get(r, c).exp() * total;
                    }
                }
                accumulate(grads, *a, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let n = g.cols as f64;
                let mut gx = Mat::zeros(g.rows, g.cols);
                let mut gg = Mat::zeros(1, g.cols);
                let mut gb = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    let (gr, hr) = (g.row(r), xhat.row(r));
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for c in 0..g.cols {
                        let d = gr[c] * gv.data[c];
                        sum_d += d;
                        sum_dh += d * hr[c];
                        gg.data[c] += gr[c] * hr[c];
                        gb.data[c] += gr[c];
                    }
                    let scale = inv_std[r] / n;
                    for c in 0..g.cols {
                        let d = gr[c] * gv.data[c];
                        gx.set(r, c, scale * (n * d - sum_d - hr[c] * sum_dh));
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, gg);
                accumulate(grads, *beta, gb);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let data = g.data[off * c..(off + r) * c].to_vec();
                    accumulate(grads, p, Mat::from_vec(r, c, data));
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut gp = Mat::zeros(r, c);
                    for row in 0..r {
                        gp.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                    }
                    accumulate(grads, p, gp);
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Mat::zeros(r, c);
                ga.data[start * c..(start + g.rows) * c].copy_from_slice(&g.data);
                accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Mat::zeros(r, c);
                for row in 0..r {
                    ga.row_mut(row)[*start..start + g.cols].copy_from_slice(g.row(row));
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Mat::zeros(r, c);
                for (i, src) in idx.iter().enumerate() {
                    if let Some(s) = *src {
                        for (o, v) in ga.row_mut(s).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::MaxRows(a, arg) => {
                let (r, c) = self.shape(*a);
                let mut ga = Mat::zeros(r, c);
                for (col, &row) in arg.iter().enumerate() {
                    ga.set(row, col, g.data[col]);
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Mat::filled(r, c, g.data[0]));
            }
            Op::Pick(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Mat::zeros(r, c);
                for (row, &col) in idx.iter().enumerate() {
                    ga.set(row, col, g.data[row]);
                }
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
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

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    debug_assert_eq!(a.shape(), b.shape());
    Mat {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric_check(build: impl Fn(&mut Tape, Var) -> Var, shape: (usize, usize), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let id = store.add("x", Mat::xavier(shape.0, shape.1, &mut rng));
        let eval = |s: &ParamStore| {
            let mut t = Tape::new(s);
            let x = t.param(id);
            let y = build(&mut t, x);
            t.value(y).scalar()
        };
        let analytic = {
            let mut t = Tape::new(&store);
            let x = t.param(id);
            let y = build(&mut t, x);
            t.backward(y)[id.0].clone().expect("grad")
        };
        let h = 1e-6;
        for k in 0..shape.0 * shape.1 {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[k] += h;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[k];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                "entry {k}: analytic {a} vs numeric {fd}"
            );
        }
    }

    #[test]
    fn matmul_chain_gradient() {
        numeric_check(
            |t, x| {
                let y = t.matmul_t(x, x);
                let z = t.tanh(y);
                t.sum(z)
            },
            (3, 4),
            1,
        );
    }

    #[test]
    fn softmax_layer_norm_gradient() {
        numeric_check(
            |t, x| {
                let g = t.constant(Mat::from_vec(1, 4, vec![1.0, 0.5, -0.3, 2.0]));
                let b = t.constant(Mat::from_vec(1, 4, vec![0.1, 0.0, 0.2, -0.1]));
                let n = t.layer_norm(x, g, b);
                let mask = [true, false, true, true, true, true, true, false, true, true, true, true];
                let s = t.softmax_rows(n, Some(&mask));
                let w = t.constant(Mat::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()));
                let p = t.mul(s, w);
                t.sum(p)
            },
            (3, 4),
            2,
        );
    }

    #[test]
    fn elementwise_and_structural_gradient() {
        numeric_check(
            |t, x| {
                let a = t.sigmoid(x);
                let b = t.slice_cols(a, 1, 2);
                let c = t.slice_rows(x, 0, 3);
                let c = t.slice_cols(c, 0, 2);
                let den = t_add1(t, c);
                let d = t.div(b, den);
                let e = t.concat_rows(&[d, b]);
                let f = t.max_rows(e);
                let l = t.log_softmax_rows(f);
                let p = t.pick(l, &[1]);
                let q = t.gather_rows(x, &[Some(2), None, Some(0)]);
                let q = t.clamp(q, -0.3, 0.3);
                let q = t.sum(q);
                let r = t.add(p, q);
                let m = t.min(a, x);
                let m = t.sum(m);
                t.add(r, m)
            },
            (3, 3),
            3,
        );

        fn t_add1(t: &mut Tape, v: Var) -> Var {
            let s = t.sigmoid(v);
            t.add_scalar(s, 1.0)
        }
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::from_vec(1, 1, vec![3.0]));
        let mut t = Tape::new(&store);
        let a = t.param(id);
        let b = t.param(id);
        assert_eq!(a, b);
        let y = t.mul(a, b);
        let g = t.backward(y);
        assert_eq!(g[0].as_ref().unwrap().scalar(), 6.0);
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let s = t.softmax_rows(x, Some(&[false, false, true, true]));
        assert_eq!(t.value(s).row(0), &[0.0, 0.0]);
        let r = t.value(s).row(1);
        assert!((r[0] + r[1] - 1.0).abs() < 1e-15);
    }
}
