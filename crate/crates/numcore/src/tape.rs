//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! Every op evaluates eagerly, stores its output on the tape and returns a
//! [`Var`] handle. [`Tape::backward`] walks the record from the loss back to
//! the leaves, so a node's gradient is complete before it is propagated.

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

const LN_EPS: f64 = 1e-5;
/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { a: usize, rows: usize, cols: usize },
    Add { a: usize, b: usize },
    AddRow { a: usize, bias: usize, cols: usize },
    Mul { a: usize, b: usize },
    MulConst { a: usize, factor: Vec<f64> },
    Scale { a: usize, c: f64 },
    Gelu { a: usize },
    Softmax { a: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, cols: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    GatherRows { table: usize, ids: Vec<usize>, cols: usize },
    Reshape { a: usize },
    CrossEntropy { probs: usize, gold: usize },
    Sum { a: usize },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of every parameter leaf into the store. A parameter
    /// recorded several times receives the sum.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (node, grad) in tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.get_mut(*id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    // tanh approximation
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input. Its gradient is still available through
    /// [`Gradients::get`], which is how input-sensitivity checks work.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id))
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    pub fn tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("tape node is well-formed")
    }

    fn dims2(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(var) {
            [r, c] => Ok((*r, *c)),
            s => Err(NumError::Rank { op, expected: 2, shape: s.to_vec() }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(a, "transpose")?;
        let out = transpose_raw(self.value(a), rows, cols);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { a: a.0, rows, cols }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a: a.0, b: b.0 }))
    }

    /// Adds a length-`cols` vector to every row of a `rows x cols` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.dims2(a, "add_row")?;
        if numel(self.shape(bias)) != cols {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % cols])
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow { a: a.0, bias: bias.0, cols }))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Element-wise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(a).len() {
            return Err(NumError::ShapeMismatch {
                op: "mul_const",
                left: self.shape(a).to_vec(),
                right: vec![factor.len()],
            });
        }
        let out = self.value(a).iter().zip(&factor).map(|(x, f)| x * f).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::MulConst { a: a.0, factor }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale { a: a.0, c })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu_parts(x).0).collect();
        self.push(self.shape(a).to_vec(), out, Op::Gelu { a: a.0 })
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(NumError::IndexOutOfRange { op: "softmax axis", index: axis, len: shape.len() });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let out = softmax_raw(self.value(a), outer, len, inner);
        Ok(self.push(shape, out, Op::Softmax { a: a.0, outer, len, inner }))
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank == 0 {
            return Err(NumError::Rank { op: "softmax", expected: 1, shape: vec![] });
        }
        self.softmax(a, rank - 1)
    }

    /// Row-wise layer normalisation of a `rows x cols` matrix with learned
    /// gain and bias of length `cols`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "layer_norm")?;
        for p in [gamma, beta] {
            if numel(self.shape(p)) != cols {
                return Err(NumError::ShapeMismatch {
                    op: "layer_norm",
                    left: vec![rows, cols],
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = g[c] * h + b[c];
            }
        }
        Ok(self.push(
            vec![rows, cols],
            out,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, cols, xhat, inv_std },
        ))
    }

    /// Selects rows of a `rows x cols` table; the result is `ids.len() x cols`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(NumError::ZeroDimension(vec![0, cols]));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumError::IndexOutOfRange { op: "gather_rows", index: id, len: rows });
            }
            out.extend_from_slice(&tv[id * cols..(id + 1) * cols]);
        }
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::GatherRows { table: table.0, ids: ids.to_vec(), cols },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() || shape.contains(&0) {
            return Err(NumError::ShapeMismatch {
                op: "reshape",
                left: self.shape(a).to_vec(),
                right: shape,
            });
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape, out, Op::Reshape { a: a.0 }))
    }

    /// `-ln(max(probs[gold], 1e-12))` over the flattened input.
    pub fn cross_entropy(&mut self, probs: Var, gold: usize) -> Result<Var> {
        let p = self.value(probs);
        if gold >= p.len() {
            return Err(NumError::IndexOutOfRange { op: "cross_entropy", index: gold, len: p.len() });
        }
        // comparison keeps NaN, where f64::max would replace it with the floor
        let clamped = if p[gold] < PROB_FLOOR { PROB_FLOOR } else { p[gold] };
        let loss = -clamped.ln();
        Ok(self.push(Vec::new(), vec![loss], Op::CrossEntropy { probs: probs.0, gold }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum { a: a.0 })
    }

    /// Sums any number of same-shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or(NumError::ZeroDimension(vec![0]))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Gradient of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumError::Rank {
                op: "backward",
                expected: 0,
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    // dA = dC B^T ; dB = A^T dC
                    let bt = transpose_raw(bv, k, n);
                    let da = matmul_raw(&g, &bt, m, n, k);
                    let at = transpose_raw(av, m, k);
                    let db = matmul_raw(&at, &g, k, m, n);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose { a, rows, cols } => {
                    accumulate(&mut grads, *a, transpose_raw(&g, *cols, *rows));
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow { a, bias, cols } => {
                    let mut db = vec![0.0; *cols];
                    for (i, v) in g.iter().enumerate() {
                        db[i % cols] += v;
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(av).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulConst { a, factor } => {
                    let da = g.iter().zip(factor).map(|(g, f)| g * f).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads, *a, g.iter().map(|v| v * c).collect());
                }
                Op::Gelu { a } => {
                    let av = &self.nodes[*a].value;
                    let da = g.iter().zip(av).map(|(g, &x)| g * gelu_parts(x).1).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax { a, outer, len, inner } => {
                    let y = &node.value;
                    let mut da = vec![0.0; y.len()];
                    for o in 0..*outer {
                        for j in 0..*inner {
                            let at = |i: usize| o * len * inner + i * inner + j;
                            let dot: f64 = (0..*len).map(|i| g[at(i)] * y[at(i)]).sum();
                            for i in 0..*len {
                                da[at(i)] = y[at(i)] * (g[at(i)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm { x, gamma, beta, cols, xhat, inv_std } => {
                    let cols = *cols;
                    let gv = &self.nodes[*gamma].value;
                    let mut dx = vec![0.0; g.len()];
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    for (r, is) in inv_std.iter().enumerate() {
                        let off = r * cols;
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..cols {
                            let gy = g[off + c];
                            dgamma[c] += gy * xhat[off + c];
                            dbeta[c] += gy;
                            let dh = gy * gv[c];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[off + c];
                        }
                        mean_dh /= cols as f64;
                        mean_dh_h /= cols as f64;
                        for c in 0..cols {
                            let dh = g[off + c] * gv[c];
                            dx[off + c] = is * (dh - mean_dh - xhat[off + c] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::GatherRows { table, ids, cols } => {
                    let mut dt = vec![0.0; self.nodes[*table].value.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..*cols {
                            dt[id * cols + c] += g[r * cols + c];
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Reshape { a } => accumulate(&mut grads, *a, g),
                Op::CrossEntropy { probs, gold } => {
                    let p = &self.nodes[*probs].value;
                    let mut dp = vec![0.0; p.len()];
                    if p[*gold] > PROB_FLOOR {
                        dp[*gold] = -g[0] / p[*gold];
                    }
                    accumulate(&mut grads, *probs, dp);
                }
                Op::Sum { a } => {
                    let n = self.nodes[*a].value.len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, delta: Vec<f64>) {
    match &mut grads[idx] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

fn softmax_raw(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| o * len * inner + i * inner + j;
            let max = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..len {
                let e = (x[at(i)] - max).exp();
                out[at(i)] = e;
                total += e;
            }
            for i in 0..len {
                out[at(i)] /= total;
            }
        }
    }
    out
}
