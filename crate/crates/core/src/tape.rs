//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value; [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient with respect to the flat parameter vector the `param` leaves
//! were sliced from. Values are computed eagerly, so decoding can branch on
//! them (sampling) while recording.

use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("variable does not belong to this tape")]
    Detached,
    #[error("backward needs a 1x1 output, got {0}x{1}")]
    NotScalar(usize, usize),
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param { offset: usize },
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Softplus(usize),
    Gelu(usize),
    Reshape(usize),
    Custom { a: usize, grad: Vec<f64> },
    LayerNorm { a: usize, inv_std: Vec<f64> },
    MaskedSoftmax { a: usize, mask: Vec<bool> },
    MaskedLogSoftmax { a: usize, mask: Vec<bool>, probs: Vec<f64> },
    Gather { a: usize, at: Vec<(usize, usize)> },
    SelectRows { a: usize, rows: Vec<usize> },
    MeanRows(usize),
    Sum(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    param_len: usize,
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl Tape {
    /// A tape whose `param` leaves index into a parameter vector of
    /// `param_len` entries.
    pub fn new(param_len: usize) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_len,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn ix(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        v.idx
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.idx < self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.ix(v)].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.data.len(), 1);
        t.data[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to `values[offset..offset + rows * cols]` of the parameter
    /// vector.
    pub fn param(&mut self, values: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        assert!(offset + rows * cols <= self.param_len, "parameter slice out of range");
        let data = values[offset..offset + rows * cols].to_vec();
        self.push(Tensor::new(rows, cols, data), Op::Param { offset })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.ix(a), self.ix(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(av.cols, bv.rows, "matmul shape mismatch");
        let (r, k, c) = (av.rows, av.cols, bv.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let x = av.data[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv.data[p * c..(p + 1) * c];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Tensor::new(r, c, out), Op::MatMul(ia, ib))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.ix(a), self.ix(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(av.cols, bv.cols, "matmul_t shape mismatch");
        let (r, k, c) = (av.rows, av.cols, bv.rows);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let arow = &av.data[i * k..(i + 1) * k];
            for j in 0..c {
                let brow = &bv.data[j * k..(j + 1) * k];
                out[i * c + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        self.push(Tensor::new(r, c, out), Op::MatMulT(ia, ib))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Var {
        let (ia, ib) = (self.ix(a), self.ix(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.rows, av.cols, data);
        self.push(t, op(ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Var {
        let (ia, ib) = (self.ix(a), self.ix(row));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert!(bv.rows == 1 && bv.cols == av.cols, "row broadcast shape mismatch");
        let c = av.cols;
        let data = av.data.iter().enumerate().map(|(i, &x)| f(x, bv.data[i % c])).collect();
        let t = Tensor::new(av.rows, c, data);
        self.push(t, op(ia, ib))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        self.row_broadcast(a, bias, |x, b| x + b, Op::AddRow)
    }

    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, gain: Var) -> Var {
        self.row_broadcast(a, gain, |x, g| x * g, Op::MulRow)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.idx].value;
        let t = Tensor::new(av.rows, av.cols, av.data.iter().map(|&x| f(x)).collect());
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ia = self.ix(a);
        self.map(a, |x| x * s, Op::Scale(ia, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let ia = self.ix(a);
        self.map(a, |x| x + s, Op::AddScalar(ia))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        self.map(a, |x| x.max(0.0), Op::Relu(ia))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        self.map(a, f64::tanh, Op::Tanh(ia))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        self.map(a, softplus, Op::Softplus(ia))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        self.map(a, gelu, Op::Gelu(ia))
    }

    /// Same data reinterpreted as `rows x cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let ia = self.ix(a);
        let data = self.nodes[ia].value.data.clone();
        self.push(Tensor::new(rows, cols, data), Op::Reshape(ia))
    }

    /// Scalar node with a caller-supplied value and gradient with respect
    /// to `a`; lets closed-form functions of a tape value join the graph.
    pub fn custom_scalar(&mut self, a: Var, value: f64, grad: Vec<f64>) -> Var {
        let ia = self.ix(a);
        assert_eq!(grad.len(), self.nodes[ia].value.data.len(), "custom gradient length mismatch");
        self.push(Tensor::scalar(value), Op::Custom { a: ia, grad })
    }

    /// Per-row standardization (no affine part), epsilon 1e-5.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        let (r, c) = (av.rows, av.cols);
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = av.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * inv;
            }
        }
        self.push(Tensor::new(r, c, out), Op::LayerNorm { a: ia, inv_std })
    }

    /// Row softmax over entries where `mask` is true; masked entries get 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        assert_eq!(mask.len(), av.data.len());
        let (r, c) = (av.rows, av.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let (row, m) = (av.row(i), &mask[i * c..(i + 1) * c]);
            let max = row.iter().zip(m).filter(|(_, &k)| k).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    z += e;
                }
            }
            if z > 0.0 {
                for v in &mut out[i * c..(i + 1) * c] {
                    *v /= z;
                }
            }
        }
        self.push(Tensor::new(r, c, out), Op::MaskedSoftmax { a: ia, mask: mask.to_vec() })
    }

    /// Row log-softmax over entries where `mask` is true; masked entries get
    /// negative infinity and receive no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        assert_eq!(mask.len(), av.data.len());
        let (r, c) = (av.rows, av.cols);
        let mut out = vec![f64::NEG_INFINITY; r * c];
        let mut probs = vec![0.0; r * c];
        for i in 0..r {
            let (row, m) = (av.row(i), &mask[i * c..(i + 1) * c]);
            let max = row.iter().zip(m).filter(|(_, &k)| k).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let z: f64 = row.iter().zip(m).filter(|(_, &k)| k).map(|(&x, _)| (x - max).exp()).sum();
            let lse = max + z.ln();
            for j in 0..c {
                if m[j] {
                    out[i * c + j] = row[j] - lse;
                    probs[i * c + j] = (row[j] - lse).exp();
                }
            }
        }
        self.push(Tensor::new(r, c, out), Op::MaskedLogSoftmax { a: ia, mask: mask.to_vec(), probs })
    }

    /// Picks entries `(row, col)` into an `m x 1` column.
    pub fn gather(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        let data = at.iter().map(|&(r, c)| av.at(r, c)).collect();
        self.push(Tensor::new(at.len(), 1, data), Op::Gather { a: ia, at: at.to_vec() })
    }

    /// Stacks the listed rows of `a` (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        let mut data = Vec::with_capacity(rows.len() * av.cols);
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        self.push(Tensor::new(rows.len(), av.cols, data), Op::SelectRows { a: ia, rows: rows.to_vec() })
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        let mut data = vec![0.0; av.cols];
        for i in 0..av.rows {
            for (d, x) in data.iter_mut().zip(av.row(i)) {
                *d += x;
            }
        }
        let inv = 1.0 / av.rows as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let cols = av.cols;
        self.push(Tensor::new(1, cols, data), Op::MeanRows(ia))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.ix(a);
        let s = self.nodes[ia].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let ids: Vec<usize> = parts.iter().map(|&p| self.ix(p)).collect();
        let rows = self.nodes[ids[0]].value.rows;
        let cols: usize = ids.iter().map(|&i| self.nodes[i].value.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &ids {
                let v = &self.nodes[i].value;
                assert_eq!(v.rows, rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row(r));
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(ids))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let ids: Vec<usize> = parts.iter().map(|&p| self.ix(p)).collect();
        let cols = self.nodes[ids[0]].value.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &ids {
            let v = &self.nodes[i].value;
            assert_eq!(v.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(ids))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.ix(a);
        let av = &self.nodes[ia].value;
        assert!(start + len <= av.cols);
        let mut data = Vec::with_capacity(av.rows * len);
        for r in 0..av.rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let rows = av.rows;
        self.push(Tensor::new(rows, len, data), Op::SliceCols { a: ia, start })
    }

    /// Gradient of a scalar output with respect to the parameter vector.
    pub fn backward(&self, output: Var) -> Result<Vec<f64>, TapeError> {
        if !self.owns(output) {
            return Err(TapeError::Detached);
        }
        let v = &self.nodes[output.idx].value;
        if v.rows != 1 || v.cols != 1 {
            return Err(TapeError::NotScalar(v.rows, v.cols));
        }
        self.backward_seeded(&[(output, Tensor::scalar(1.0))])
    }

    /// Vector-Jacobian product: propagates the given output cotangents.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<Vec<f64>, TapeError> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (v, g) in seeds {
            if !self.owns(*v) {
                return Err(TapeError::Detached);
            }
            let val = &self.nodes[v.idx].value;
            assert_eq!((val.rows, val.cols), (g.rows, g.cols), "seed shape mismatch");
            accumulate(&mut grads, v.idx, val.data.len(), &g.data);
            top = top.max(v.idx);
        }
        let mut out = vec![0.0; self.param_len];
        for idx in (0..=top).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    for (o, x) in out[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (r, k, c) = (av.rows, av.cols, bv.cols);
                    let mut da = vec![0.0; r * k];
                    let mut db = vec![0.0; k * c];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let brow = &bv.data[p * c..(p + 1) * c];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            let x = av.data[i * k + p];
                            if x != 0.0 {
                                for (d, gg) in db[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                    *d += x * gg;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, r * k, &da);
                    accumulate(&mut grads, *b, k * c, &db);
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (r, k, c) = (av.rows, av.cols, bv.rows);
                    let mut da = vec![0.0; r * k];
                    let mut db = vec![0.0; c * k];
                    for i in 0..r {
                        for j in 0..c {
                            let gg = g[i * c + j];
                            if gg == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gg * bv.data[j * k + p];
                                db[j * k + p] += gg * av.data[i * k + p];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, r * k, &da);
                    accumulate(&mut grads, *b, c * k, &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.len(), &g);
                    accumulate(&mut grads, *b, g.len(), &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.len(), &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *b, g.len(), &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da: Vec<f64> = g.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, g.len(), &da);
                    accumulate(&mut grads, *b, g.len(), &db);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *a, g.len(), &g);
                    let c = val.cols;
                    let mut db = vec![0.0; c];
                    for (i, x) in g.iter().enumerate() {
                        db[i % c] += x;
                    }
                    accumulate(&mut grads, *b, c, &db);
                }
                Op::MulRow(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let c = val.cols;
                    let da: Vec<f64> = g.iter().enumerate().map(|(i, x)| x * bv.data[i % c]).collect();
                    let mut db = vec![0.0; c];
                    for (i, x) in g.iter().enumerate() {
                        db[i % c] += x * av.data[i];
                    }
                    accumulate(&mut grads, *a, g.len(), &da);
                    accumulate(&mut grads, *b, c, &db);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = g.iter().map(|x| x * s).collect();
                    accumulate(&mut grads, *a, g.len(), &da);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.len(), &g),
                Op::Relu(a) => {
                    let av = &self.nodes[*a].value;
                    let da: Vec<f64> = g.iter().zip(&av.data).map(|(x, &y)| if y > 0.0 { *x } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, g.len(), &da);
                }
                Op::Tanh(a) => {
                    let da: Vec<f64> = g.iter().zip(&val.data).map(|(x, y)| x * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, g.len(), &da);
                }
                Op::Softplus(a) => {
                    let av = &self.nodes[*a].value;
                    let da: Vec<f64> = g.iter().zip(&av.data).map(|(x, &y)| x * sigmoid(y)).collect();
                    accumulate(&mut grads, *a, g.len(), &da);
                }
                Op::Gelu(a) => {
                    let av = &self.nodes[*a].value;
                    let da: Vec<f64> = g.iter().zip(&av.data).map(|(x, &y)| x * gelu_grad(y)).collect();
                    accumulate(&mut grads, *a, g.len(), &da);
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g.len(), &g),
                Op::Custom { a, grad } => {
                    let da: Vec<f64> = grad.iter().map(|x| x * g[0]).collect();
                    accumulate(&mut grads, *a, da.len(), &da);
                }
                Op::LayerNorm { a, inv_std } => {
                    let (r, c) = (val.rows, val.cols);
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let y = val.row(i);
                        let gy = &g[i * c..(i + 1) * c];
                        let mean_g = gy.iter().sum::<f64>() / c as f64;
                        let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            da[i * c + j] = inv_std[i] * (gy[j] - mean_g - y[j] * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *a, r * c, &da);
                }
                Op::MaskedSoftmax { a, mask } => {
                    let (r, c) = (val.rows, val.cols);
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let p = val.row(i);
                        let gy = &g[i * c..(i + 1) * c];
                        let dot: f64 = (0..c).filter(|&j| mask[i * c + j]).map(|j| gy[j] * p[j]).sum();
                        for j in 0..c {
                            if mask[i * c + j] {
                                da[i * c + j] = p[j] * (gy[j] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, r * c, &da);
                }
                Op::MaskedLogSoftmax { a, mask, probs } => {
                    let (r, c) = (val.rows, val.cols);
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let gy = &g[i * c..(i + 1) * c];
                        let total: f64 = (0..c).filter(|&j| mask[i * c + j]).map(|j| gy[j]).sum();
                        for j in 0..c {
                            if mask[i * c + j] {
                                da[i * c + j] = gy[j] - probs[i * c + j] * total;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, r * c, &da);
                }
                Op::Gather { a, at } => {
                    let av = &self.nodes[*a].value;
                    let mut da = vec![0.0; av.data.len()];
                    for (k, &(r, c)) in at.iter().enumerate() {
                        da[r * av.cols + c] += g[k];
                    }
                    accumulate(&mut grads, *a, da.len(), &da);
                }
                Op::SelectRows { a, rows } => {
                    let av = &self.nodes[*a].value;
                    let c = av.cols;
                    let mut da = vec![0.0; av.data.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            da[r * c + j] += g[k * c + j];
                        }
                    }
                    accumulate(&mut grads, *a, da.len(), &da);
                }
                Op::MeanRows(a) => {
                    let av = &self.nodes[*a].value;
                    let inv = 1.0 / av.rows as f64;
                    let da: Vec<f64> = (0..av.data.len()).map(|i| g[i % av.cols] * inv).collect();
                    accumulate(&mut grads, *a, da.len(), &da);
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.data.len();
                    accumulate(&mut grads, *a, n, &vec![g[0]; n]);
                }
                Op::ConcatCols(ids) => {
                    let (r, total) = (val.rows, val.cols);
                    let mut start = 0;
                    for &i in ids {
                        let c = self.nodes[i].value.cols;
                        let mut da = Vec::with_capacity(r * c);
                        for row in 0..r {
                            da.extend_from_slice(&g[row * total + start..row * total + start + c]);
                        }
                        accumulate(&mut grads, i, r * c, &da);
                        start += c;
                    }
                }
                Op::ConcatRows(ids) => {
                    let mut start = 0;
                    for &i in ids {
                        let n = self.nodes[i].value.data.len();
                        accumulate(&mut grads, i, n, &g[start..start + n]);
                        start += n;
                    }
                }
                Op::SliceCols { a, start } => {
                    let av = &self.nodes[*a].value;
                    let (r, c, len) = (av.rows, av.cols, val.cols);
                    let mut da = vec![0.0; r * c];
                    for row in 0..r {
                        da[row * c + start..row * c + start + len].copy_from_slice(&g[row * len..(row + 1) * len]);
                    }
                    accumulate(&mut grads, *a, r * c, &da);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize, g: &[f64]) {
    debug_assert_eq!(len, g.len());
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
