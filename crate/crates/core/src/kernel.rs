//! Relation kernels and the correlation matrix of the latent attention logits.
//!
//! Each kernel has the form `k(i, j) = omega_i * omega_j * base(i, j)`; the
//! correlation divides the scales back out, so only the scale-free bases and
//! the mixture weights shape `psi`. The scales themselves reappear as the
//! per-key standard deviations of the logits.

use rand::Rng;

use crate::autograd::{apply_jitter, normalize_correlation, rbf_gram_matrix, Tape, Var};
use crate::config::{ItemKernel, KernelConfig, KernelSet};
use crate::corpus::{CoocStats, PAD};
use crate::error::ModelError;
use crate::params::{fan_in_matrix, ParamId, ParamStore};
use crate::tensor::{gemm, softplus, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelWeights {
    /// `[d, d_h]` query side of the scale head.
    pub omega_q: ParamId,
    /// `[d, d_h]` key side of the scale head.
    pub omega_k: ParamId,
    /// `[d, d]` user modulation `W_s`.
    pub modulation: ParamId,
    /// `[d, 3]` mixture head.
    pub mix_w: ParamId,
    /// `[1, 3]` mixture bias.
    pub mix_b: ParamId,
}

impl KernelWeights {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, head_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            omega_q: store.add(format!("{prefix}.omega_q"), fan_in_matrix(dim, head_dim, rng)),
            omega_k: store.add(format!("{prefix}.omega_k"), fan_in_matrix(dim, head_dim, rng)),
            modulation: store.add(format!("{prefix}.user_modulation"), fan_in_matrix(dim, dim, rng)),
            mix_w: store.add(format!("{prefix}.mixture_w"), Matrix::zeros(dim, 3)),
            mix_b: store.add(format!("{prefix}.mixture_b"), Matrix::zeros(1, 3)),
        }
    }

    /// `Omega[q, j] = softplus((x_q W_q) . (x_j W_k) / sqrt(d_h))`, one row per query.
    pub fn omega(&self, tape: &mut Tape, x: Var) -> Var {
        let wq = tape.param(self.omega_q);
        let wk = tape.param(self.omega_k);
        let dh = tape.value(wq).cols() as f64;
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let logits = tape.matmul_t(q, false, k, true);
        let scaled = tape.scale(logits, 1.0 / dh.sqrt());
        tape.softplus(scaled)
    }

    /// Mixture weights `r` as a `[1, 3]` row, zero on inactive kernels.
    pub fn mixture(&self, tape: &mut Tape, user: Var, active: KernelSet) -> Result<Var, ModelError> {
        let w = tape.param(self.mix_w);
        let b = tape.param(self.mix_b);
        let logits = tape.matmul(user, w);
        let logits = tape.add(logits, b);
        tape.softmax_rows(logits, &active.flags())
    }

    /// Kernel-mixture correlation over the rows of `x` (unnormalized inputs;
    /// normalization happens here). Returns `(psi, r)`.
    pub fn correlation(
        &self,
        tape: &mut Tape,
        x: Var,
        user: Var,
        counting_base: &Matrix,
        config: &KernelConfig,
        jitter: f64,
    ) -> Result<(Var, Var), ModelError> {
        let r = self.mixture(tape, user, config.active)?;
        let xn = tape.row_normalize(x);
        let mut terms = Vec::with_capacity(3);
        if config.active.counting {
            let c = tape.constant(counting_base.clone());
            terms.push(tape.scale_by_entry(c, r, 0));
        }
        if config.active.item {
            let base = match config.item_variant {
                ItemKernel::Linear => tape.matmul_t(xn, false, xn, true),
                ItemKernel::Rbf => tape.rbf_gram(xn),
            };
            terms.push(tape.scale_by_entry(base, r, 1));
        }
        if config.active.user {
            let ws = tape.param(self.modulation);
            let v = tape.matmul(user, ws);
            let m = tape.mul_row(xn, v);
            let base = tape.matmul_t(m, false, m, true);
            terms.push(tape.scale_by_entry(base, r, 2));
        }
        let mut mixed = terms[0];
        for &t in &terms[1..] {
            mixed = tape.add(mixed, t);
        }
        let psi = tape.corr_normalize(mixed, jitter)?;
        Ok((psi, r))
    }
}

/// `omega_i = softplus((x_q W_q) . (x_i W_k) / sqrt(d_h))` for every row `i`.
pub fn variance_omega(x: &Matrix, q: usize, w_q: &Matrix, w_k: &Matrix) -> Vec<f64> {
    let dh = w_q.cols() as f64;
    let qv = gemm(&Matrix::row_vector(x.row(q)), false, w_q, false);
    let kv = gemm(x, false, w_k, false);
    (0..x.rows())
        .map(|i| {
            let dot: f64 = qv.row(0).iter().zip(kv.row(i)).map(|(a, b)| a * b).sum();
            softplus(dot / dh.sqrt())
        })
        .collect()
}

/// Scale-free counting similarity `P_ij^2 / (P_i P_j)`. An item is fully
/// similar to itself; pairs involving padding or unseen items give 0.
pub fn counting_similarity(i: usize, j: usize, cooc: &CoocStats) -> f64 {
    if i == PAD || j == PAD {
        return 0.0;
    }
    if i == j {
        return 1.0;
    }
    let (pi, pj) = (cooc.item_count(i) as f64, cooc.item_count(j) as f64);
    if pi == 0.0 || pj == 0.0 {
        return 0.0;
    }
    let pij = cooc.pair_count(i, j) as f64;
    pij * pij / (pi * pj)
}

pub fn counting_kernel(i: usize, j: usize, cooc: &CoocStats, omega_i: f64, omega_j: f64) -> f64 {
    omega_i * omega_j * counting_similarity(i, j, cooc)
}

/// Item kernel on normalized representations.
pub fn item_kernel(xi: &[f64], xj: &[f64], omega_i: f64, omega_j: f64, variant: ItemKernel) -> f64 {
    let base = match variant {
        ItemKernel::Linear => dot(xi, xj),
        ItemKernel::Rbf => (-xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp(),
    };
    omega_i * omega_j * base
}

/// Linear kernel on `(W_s u) ⊙ x`; `modulation` is the precomputed `W_s u`.
pub fn user_kernel(xi: &[f64], xj: &[f64], modulation: &[f64], omega_i: f64, omega_j: f64) -> f64 {
    let base: f64 = xi
        .iter()
        .zip(xj)
        .zip(modulation)
        .map(|((a, b), m)| (m * a) * (m * b))
        .sum();
    omega_i * omega_j * base
}

/// `softmax(u W_u + b_u)` restricted to the active kernels (order: counting, item, user).
pub fn mixture(user: &[f64], w_u: &Matrix, b_u: &[f64], active: KernelSet) -> [f64; 3] {
    let logits = gemm(&Matrix::row_vector(user), false, w_u, false);
    let flags = active.flags();
    let max = (0..3)
        .filter(|&m| flags[m])
        .map(|m| logits[(0, m)] + b_u[m])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut r = [0.0; 3];
    for m in 0..3 {
        if flags[m] {
            r[m] = (logits[(0, m)] + b_u[m] - max).exp();
        }
    }
    let total: f64 = r.iter().sum();
    r.iter_mut().for_each(|v| *v /= total);
    r
}

/// Row-wise L2 normalization (zero rows stay zero).
pub fn normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let n = dot(x.row(i), x.row(i)).sqrt();
        if n > 0.0 {
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

pub fn counting_base(items: &[usize], cooc: &CoocStats) -> Matrix {
    let n = items.len();
    let mut m = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            m[(a, b)] = counting_similarity(items[a], items[b], cooc);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationOutput {
    pub omega: Vec<f64>,
    /// Final correlation (normalized, clamped, jittered).
    pub psi: Matrix,
    /// Normalized and clamped, before jitter.
    pub clamped: Matrix,
    /// `sum_m r_m k_m(x_i, x_j)` before normalization.
    pub gram: Matrix,
    pub mixture_r: [f64; 3],
}

/// Correlation matrix for a window of positions. `x` holds the raw (not yet
/// normalized) representations, `items` their ids.
pub fn correlation_matrix(
    x: &Matrix,
    items: &[usize],
    cooc: &CoocStats,
    modulation: &[f64],
    mixture_r: [f64; 3],
    omega: &[f64],
    config: &KernelConfig,
) -> Result<CorrelationOutput, ModelError> {
    let n = items.len();
    assert_eq!(x.rows(), n, "one representation per item");
    assert_eq!(omega.len(), n, "one scale per item");
    let xn = normalize_rows(x);
    let flags = config.active.flags();
    let mut gram = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (wi, wj) = (omega[i], omega[j]);
            let mut k = 0.0;
            if flags[0] {
                k += mixture_r[0] * counting_kernel(items[i], items[j], cooc, wi, wj);
            }
            if flags[1] {
                k += mixture_r[1] * item_kernel(xn.row(i), xn.row(j), wi, wj, config.item_variant);
            }
            if flags[2] {
                k += mixture_r[2] * user_kernel(xn.row(i), xn.row(j), modulation, wi, wj);
            }
            gram[(i, j)] = k;
        }
    }
    let mut raw = gram.clone();
    for i in 0..n {
        for j in 0..n {
            raw[(i, j)] /= omega[i] * omega[j];
        }
    }
    let (clamped, _) = normalize_correlation(&raw, config.jitter)?;
    let psi = apply_jitter(&clamped, config.jitter);
    Ok(CorrelationOutput {
        omega: omega.to_vec(),
        psi,
        clamped,
        gram,
        mixture_r,
    })
}

/// Scale-free Gram matrix of one kernel, for validity checks.
pub fn kernel_gram(
    which: usize,
    x: &Matrix,
    items: &[usize],
    cooc: &CoocStats,
    modulation: &[f64],
    omega: &[f64],
    variant: ItemKernel,
) -> Matrix {
    let n = x.rows();
    let xn = normalize_rows(x);
    if which == 1 && variant == ItemKernel::Rbf {
        let mut k = rbf_gram_matrix(&xn);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] *= omega[i] * omega[j];
            }
        }
        return k;
    }
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = match which {
                0 => counting_kernel(items[i], items[j], cooc, omega[i], omega[j]),
                1 => item_kernel(xn.row(i), xn.row(j), omega[i], omega[j], variant),
                _ => user_kernel(xn.row(i), xn.row(j), modulation, omega[i], omega[j]),
            };
        }
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
