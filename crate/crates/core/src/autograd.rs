//! A small reverse-mode tape over dense matrices.
//!
//! Each forward pass records its nodes on a fresh [`Tape`]; parameters are
//! read from a shared [`ParamStore`] and their gradients land in a
//! [`Gradients`] buffer on [`Tape::backward`]. Only the operations the model
//! needs are provided, several of them fused (layer norm, Cholesky,
//! correlation normalization, ListMLE) so their backward rules stay exact.

use crate::error::ModelError;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{self, gemm_acc, sigmoid, softplus, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Powf(Var, f64),
    LogSigmoid(Var),
    SoftmaxRows { a: Var },
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    RowNormalize { a: Var, norms: Vec<f64> },
    RbfGram(Var),
    Cholesky(Var),
    CorrNormalize { a: Var, jitter: f64, clamped: Vec<bool> },
    ScaleByEntry { a: Var, s: Var, idx: usize },
    ConcatCols(Vec<Var>),
    RowDot(Var, Var),
    Select { a: Var, idx: Vec<(usize, usize)> },
    SumAll(Var),
    ListMle { a: Var, order: Vec<usize> },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Rows `ids` of a parameter table; the gradient scatters back.
    pub fn gather(&mut self, param: ParamId, ids: &[usize]) -> Var {
        let table = self.params.get(param);
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.push(out, Op::Gather { param, ids: ids.to_vec() })
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = tensor::gemm(self.value(a), ta, self.value(b), tb);
        self.push(value, Op::MatMul { a, ta, b, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).map(|x| alpha * x);
        self.push(value, Op::Scale(a, alpha))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    /// `a[i, :] + row[0, :]`
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.shape(), (1, am.cols()), "add_row shape");
        let mut value = am.clone();
        for i in 0..value.rows() {
            for (x, r) in value.row_mut(i).iter_mut().zip(rm.as_slice()) {
                *x += r;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    /// `a[i, :] * row[0, :]`
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.shape(), (1, am.cols()), "mul_row shape");
        let mut value = am.clone();
        for i in 0..value.rows() {
            for (x, r) in value.row_mut(i).iter_mut().zip(rm.as_slice()) {
                *x *= r;
            }
        }
        self.push(value, Op::MulRow(a, row))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(p));
        self.push(value, Op::Powf(a, p))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(tensor::log_sigmoid);
        self.push(value, Op::LogSigmoid(a))
    }

    /// Row-wise softmax over entries where `keep` is true; the rest are 0.
    pub fn softmax_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var, ModelError> {
        let am = self.value(a);
        assert_eq!(keep.len(), am.len(), "softmax mask shape");
        let cols = am.cols();
        let mut value = Matrix::zeros(am.rows(), cols);
        for i in 0..am.rows() {
            let row = am.row(i);
            let mask = &keep[i * cols..(i + 1) * cols];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(ModelError::EmptyAttentionRow { row: i });
            }
            let out = value.row_mut(i);
            let mut total = 0.0;
            for j in 0..cols {
                if mask[j] {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            out.iter_mut().for_each(|x| *x /= total);
        }
        Ok(self.push(value, Op::SoftmaxRows { a }))
    }

    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let am = self.value(a);
        let (rows, cols) = am.shape();
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let row = am.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[(i, j)] = h;
                value[(i, j)] = g[(0, j)] * h + b[(0, j)];
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Each row divided by its L2 norm (rows with zero norm stay zero).
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut value = am.clone();
        let mut norms = Vec::with_capacity(am.rows());
        for i in 0..am.rows() {
            let n = am.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                value.row_mut(i).iter_mut().for_each(|x| *x /= n);
            }
        }
        self.push(value, Op::RowNormalize { a, norms })
    }

    /// `K[i, j] = exp(-||a_i - a_j||^2)`
    pub fn rbf_gram(&mut self, a: Var) -> Var {
        let value = rbf_gram_matrix(self.value(a));
        self.push(value, Op::RbfGram(a))
    }

    pub fn cholesky(&mut self, a: Var) -> Result<Var, ModelError> {
        let l = tensor::cholesky(self.value(a)).ok_or(ModelError::CholeskyFailed {
            dim: self.value(a).rows(),
        })?;
        Ok(self.push(l, Op::Cholesky(a)))
    }

    /// Unit-diagonal correlation from a symmetric similarity matrix:
    /// `c_ij = a_ij / sqrt(a_ii a_jj)`, off-diagonals clamped to
    /// `[-1 + jitter, 1 - jitter]`, then `(c + jitter I) / (1 + jitter)`.
    pub fn corr_normalize(&mut self, a: Var, jitter: f64) -> Result<Var, ModelError> {
        let (clamped_corr, clamped) = normalize_correlation(self.value(a), jitter)?;
        let value = apply_jitter(&clamped_corr, jitter);
        Ok(self.push(value, Op::CorrNormalize { a, jitter, clamped }))
    }

    /// `a * s[0, idx]`
    pub fn scale_by_entry(&mut self, a: Var, s: Var, idx: usize) -> Var {
        let c = self.value(s).as_slice()[idx];
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::ScaleByEntry { a, s, idx })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.rows(), rows, "concat row mismatch");
            for i in 0..rows {
                value.row_mut(i)[off..off + pm.cols()].copy_from_slice(pm.row(i));
            }
            off += pm.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise dot product, `[m, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "row_dot shape");
        let value = Matrix::from_vec(
            am.rows(),
            1,
            (0..am.rows())
                .map(|i| am.row(i).iter().zip(bm.row(i)).map(|(x, y)| x * y).sum())
                .collect(),
        );
        self.push(value, Op::RowDot(a, b))
    }

    /// Picks the listed entries into a `[1, k]` row.
    pub fn select(&mut self, a: Var, idx: &[(usize, usize)]) -> Var {
        let am = self.value(a);
        let value = Matrix::from_vec(1, idx.len(), idx.iter().map(|&(i, j)| am[(i, j)]).collect());
        self.push(value, Op::Select { a, idx: idx.to_vec() })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Negative Plackett-Luce log-likelihood of `order` under scores `a[0, :]`.
    pub fn list_mle(&mut self, a: Var, order: &[usize]) -> Var {
        let loss = list_mle_value(self.value(a).as_slice(), order);
        self.push(Matrix::scalar(loss), Op::ListMle { a, order: order.to_vec() })
    }

    /// Backpropagates from the scalar `root`, adding parameter gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Gradients) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from non-scalar");
        let mut adj: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut adj, grads);
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>], grads: &mut Gradients) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => grads.get_mut(*id).add_scaled(g, 1.0),
            Op::Gather { param, ids } => {
                let gp = grads.get_mut(*param);
                for (r, &id) in ids.iter().enumerate() {
                    for (t, s) in gp.row_mut(id).iter_mut().zip(g.row(r)) {
                        *t += s;
                    }
                }
            }
            Op::MatMul { a, ta, b, tb } => {
                let (am, bm) = (val(*a), val(*b));
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                let mut gb = Matrix::zeros(bm.rows(), bm.cols());
                match (ta, tb) {
                    (false, false) => {
                        gemm_acc(&mut ga, 1.0, g, false, bm, true);
                        gemm_acc(&mut gb, 1.0, am, true, g, false);
                    }
                    (false, true) => {
                        gemm_acc(&mut ga, 1.0, g, false, bm, false);
                        gemm_acc(&mut gb, 1.0, g, true, am, false);
                    }
                    (true, false) => {
                        gemm_acc(&mut ga, 1.0, bm, false, g, true);
                        gemm_acc(&mut gb, 1.0, am, false, g, false);
                    }
                    (true, true) => {
                        gemm_acc(&mut ga, 1.0, bm, true, g, true);
                        gemm_acc(&mut gb, 1.0, g, true, am, true);
                    }
                }
                accum(adj, *a, ga);
                accum(adj, *b, gb);
            }
            Op::Add(a, b) => {
                accum(adj, *a, g.clone());
                accum(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accum(adj, *a, g.clone());
                accum(adj, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accum(adj, *a, g.zip_map(val(*b), |x, y| x * y));
                accum(adj, *b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Scale(a, alpha) => accum(adj, *a, g.map(|x| x * alpha)),
            Op::AddScalar(a) => accum(adj, *a, g.clone()),
            Op::AddRow(a, row) => {
                let mut gr = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (t, s) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *t += s;
                    }
                }
                accum(adj, *a, g.clone());
                accum(adj, *row, gr);
            }
            Op::MulRow(a, row) => {
                let (am, rm) = (val(*a), val(*row));
                let mut ga = g.clone();
                let mut gr = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        ga[(i, j)] *= rm[(0, j)];
                        gr[(0, j)] += g[(i, j)] * am[(i, j)];
                    }
                }
                accum(adj, *a, ga);
                accum(adj, *row, gr);
            }
            Op::Softplus(a) => accum(adj, *a, g.zip_map(val(*a), |d, x| d * sigmoid(x))),
            Op::Relu(a) => accum(adj, *a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::Exp(a) => accum(adj, *a, g.zip_map(&node.value, |d, y| d * y)),
            Op::Powf(a, p) => accum(adj, *a, g.zip_map(val(*a), |d, x| d * p * x.powf(p - 1.0))),
            Op::LogSigmoid(a) => accum(adj, *a, g.zip_map(val(*a), |d, x| d * sigmoid(-x))),
            Op::SoftmaxRows { a } => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(p, d)| p * d).sum();
                    for j in 0..y.cols() {
                        ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                accum(adj, *a, ga);
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gm = val(*gain);
                let (rows, cols) = xhat.shape();
                let mut ga = Matrix::zeros(rows, cols);
                let mut gg = Matrix::zeros(1, cols);
                let mut gb = Matrix::zeros(1, cols);
                for i in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..cols {
                        let d = g[(i, j)] * gm[(0, j)];
                        mean_d += d;
                        mean_dx += d * xhat[(i, j)];
                        gg[(0, j)] += g[(i, j)] * xhat[(i, j)];
                        gb[(0, j)] += g[(i, j)];
                    }
                    mean_d /= cols as f64;
                    mean_dx /= cols as f64;
                    for j in 0..cols {
                        let d = g[(i, j)] * gm[(0, j)];
                        ga[(i, j)] = inv_std[i] * (d - mean_d - xhat[(i, j)] * mean_dx);
                    }
                }
                accum(adj, *a, ga);
                accum(adj, *gain, gg);
                accum(adj, *bias, gb);
            }
            Op::RowNormalize { a, norms } => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    if norms[i] == 0.0 {
                        continue;
                    }
                    let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(p, d)| p * d).sum();
                    for j in 0..y.cols() {
                        ga[(i, j)] = (g[(i, j)] - y[(i, j)] * dot) / norms[i];
                    }
                }
                accum(adj, *a, ga);
            }
            Op::RbfGram(a) => {
                let x = val(*a);
                let k = &node.value;
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.rows() {
                        if i == j {
                            continue;
                        }
                        let w = -2.0 * (g[(i, j)] + g[(j, i)]) * k[(i, j)];
                        for c in 0..x.cols() {
                            ga[(i, c)] += w * (x[(i, c)] - x[(j, c)]);
                        }
                    }
                }
                accum(adj, *a, ga);
            }
            Op::Cholesky(a) => accum(adj, *a, cholesky_backward(&node.value, g)),
            Op::CorrNormalize { a, jitter, clamped } => {
                let t = val(*a);
                let n = t.rows();
                let scale = 1.0 / (1.0 + jitter);
                let mut ga = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        if i == j || clamped[i * n + j] {
                            continue;
                        }
                        let gij = g[(i, j)] * scale;
                        let denom = (t[(i, i)] * t[(j, j)]).sqrt();
                        let c = t[(i, j)] / denom;
                        ga[(i, j)] += gij / denom;
                        ga[(i, i)] -= 0.5 * gij * c / t[(i, i)];
                        ga[(j, j)] -= 0.5 * gij * c / t[(j, j)];
                    }
                }
                accum(adj, *a, ga);
            }
            Op::ScaleByEntry { a, s, idx } => {
                let sm = val(*s);
                let c = sm.as_slice()[*idx];
                let mut gs = Matrix::zeros(sm.rows(), sm.cols());
                gs.as_mut_slice()[*idx] = g
                    .as_slice()
                    .iter()
                    .zip(val(*a).as_slice())
                    .map(|(d, x)| d * x)
                    .sum();
                accum(adj, *a, g.map(|d| d * c));
                accum(adj, *s, gs);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut gp = Matrix::zeros(g.rows(), pc);
                    for i in 0..g.rows() {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + pc]);
                    }
                    off += pc;
                    accum(adj, p, gp);
                }
            }
            Op::RowDot(a, b) => {
                let (am, bm) = (val(*a), val(*b));
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                let mut gb = Matrix::zeros(bm.rows(), bm.cols());
                for i in 0..am.rows() {
                    let d = g[(i, 0)];
                    for j in 0..am.cols() {
                        ga[(i, j)] = d * bm[(i, j)];
                        gb[(i, j)] = d * am[(i, j)];
                    }
                }
                accum(adj, *a, ga);
                accum(adj, *b, gb);
            }
            Op::Select { a, idx } => {
                let am = val(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for (k, &(i, j)) in idx.iter().enumerate() {
                    ga[(i, j)] += g[(0, k)];
                }
                accum(adj, *a, ga);
            }
            Op::SumAll(a) => {
                let am = val(*a);
                accum(adj, *a, Matrix::filled(am.rows(), am.cols(), g[(0, 0)]));
            }
            Op::ListMle { a, order } => {
                let s = val(*a);
                let mut ga = list_mle_grad(s.as_slice(), order);
                ga.iter_mut().for_each(|x| *x *= g[(0, 0)]);
                accum(adj, *a, Matrix::from_vec(s.rows(), s.cols(), ga));
            }
        }
    }
}

fn accum(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn rbf_gram_matrix(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
            let v = (-d2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Diagonal normalization and off-diagonal clamp. Returns the clamped
/// correlation and a mask of entries the clamp touched.
pub(crate) fn normalize_correlation(t: &Matrix, jitter: f64) -> Result<(Matrix, Vec<bool>), ModelError> {
    let n = t.rows();
    for i in 0..n {
        if !(t[(i, i)] > 0.0) {
            return Err(ModelError::NonPositiveSelfSimilarity { row: i });
        }
    }
    let mut c = Matrix::identity(n);
    let mut clamped = vec![false; n * n];
    let bound = 1.0 - jitter;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = t[(i, j)] / (t[(i, i)] * t[(j, j)]).sqrt();
            if v > bound || v < -bound {
                clamped[i * n + j] = true;
                c[(i, j)] = v.clamp(-bound, bound);
            } else {
                c[(i, j)] = v;
            }
        }
    }
    Ok((c, clamped))
}

pub(crate) fn apply_jitter(c: &Matrix, jitter: f64) -> Matrix {
    let n = c.rows();
    let mut out = c.map(|x| x / (1.0 + jitter));
    for i in 0..n {
        out[(i, i)] = 1.0;
    }
    out
}

/// Symmetric adjoint of the Cholesky factorization: given `L` and `dL`,
/// returns `sym(L^{-T} Phi(L^T dL) L^{-1})`, where `Phi` keeps the lower
/// triangle and halves the diagonal.
fn cholesky_backward(l: &Matrix, gl: &Matrix) -> Matrix {
    let n = l.rows();
    let mut lower = gl.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            lower[(i, j)] = 0.0;
        }
    }
    let mut p = tensor::gemm(l, true, &lower, false);
    for i in 0..n {
        p[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            p[(i, j)] = 0.0;
        }
    }
    let y = tensor::solve_lower_transpose(l, &p);
    let mt = tensor::solve_lower_transpose(l, &y.transpose());
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = 0.5 * (mt[(i, j)] + mt[(j, i)]);
        }
    }
    s
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn list_mle_value(scores: &[f64], order: &[usize]) -> f64 {
    let mut loss = 0.0;
    for m in 0..order.len() {
        let tail = order[m..].iter().map(|&k| scores[k]);
        loss -= scores[order[m]] - log_sum_exp(tail);
    }
    loss
}

fn list_mle_grad(scores: &[f64], order: &[usize]) -> Vec<f64> {
    let n = order.len();
    let mut grad = vec![0.0; scores.len()];
    let lse: Vec<f64> = (0..n)
        .map(|m| log_sum_exp(order[m..].iter().map(|&k| scores[k])))
        .collect();
    for (j, &item) in order.iter().enumerate() {
        let mut g = -1.0;
        for lse_m in &lse[..=j] {
            g += (scores[item] - lse_m).exp();
        }
        grad[item] = g;
    }
    grad
}
