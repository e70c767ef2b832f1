//! The relation-aware kernelized self-attention block.
//!
//! Every query row `q` gets its own skew-normal over the keys it can see
//! (`j <= q`). Its location is the usual scaled dot product, its scale comes
//! from the kernel module's `omega` head, its correlation is the leading
//! `(q+1) x (q+1)` block of one kernel correlation over the whole window, and
//! its shape is a softplus head times the two-hop co-occurrence ratio. Since
//! the Cholesky factor of a leading block is the leading block of the factor,
//! all rows share a single factorization: with `E` holding row `q`'s standard
//! normal draws in its first `q+1` entries, `Y = E L^T` gives every row's
//! correlated draw at once.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Var};
use crate::config::{ModelConfig, StochasticRows};
use crate::corpus::CoocStats;
use crate::error::ModelError;
use crate::kernel::{counting_base, KernelWeights};
use crate::params::{fan_in_matrix, ParamId, ParamStore};
use crate::tensor::{gemm, softplus, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    /// Sampled logits, dropout on.
    #[default]
    TrainStochastic,
    /// Logits are the location.
    EvalLocation,
    /// Logits are the analytic mean of the skew-normal.
    EvalMeanShift,
    /// Sampled logits, dropout off.
    EvalStochastic,
}

impl ForwardMode {
    pub fn is_training(self) -> bool {
        self == ForwardMode::TrainStochastic
    }

    pub fn samples(self) -> bool {
        matches!(self, ForwardMode::TrainStochastic | ForwardMode::EvalStochastic)
    }
}

impl std::str::FromStr for ForwardMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self, crate::Error> {
        match s {
            "train_stochastic" => Ok(Self::TrainStochastic),
            "eval_location" | "location" => Ok(Self::EvalLocation),
            "eval_mean_shift" | "mean_shift" => Ok(Self::EvalMeanShift),
            "eval_stochastic" | "stochastic" => Ok(Self::EvalStochastic),
            _ => Err(crate::Error::InvalidArgument(format!("unknown forward mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: ForwardMode,
    /// Replace the learned scale head by a constant.
    pub fixed_omega: Option<f64>,
    /// Force `alpha = 0`.
    pub zero_shape: bool,
    /// Record per-head matrices.
    pub trace: bool,
}

impl ForwardOptions {
    pub fn new(mode: ForwardMode) -> Self {
        Self {
            mode,
            fixed_omega: None,
            zero_shape: false,
            trace: false,
        }
    }
}

/// Per-sequence constants shared by all blocks and heads.
#[derive(Clone, Debug)]
pub struct SequenceContext {
    pub items: Vec<usize>,
    /// Dense co-occurrence window, diagonal `P_i`.
    pub counts: Matrix,
    pub counting_base: Matrix,
    /// Row `q`: `alpha_hat / max(alpha_hat)` for keys `j <= q`.
    pub shape_ratio: Matrix,
    /// Causal visibility, row-major `m x m`.
    pub causal: Vec<bool>,
}

impl SequenceContext {
    pub fn new(items: &[usize], cooc: &CoocStats) -> Self {
        let m = items.len();
        let mut counts = Matrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                counts[(a, b)] = cooc.pair_count(items[a], items[b]) as f64;
            }
        }
        let shape_ratio = shape_ratio_matrix(&counts);
        let causal = (0..m * m).map(|k| k % m <= k / m).collect();
        Self {
            items: items.to_vec(),
            counting_base: counting_base(items, cooc),
            counts,
            shape_ratio,
            causal,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Two-hop co-occurrence of each item with the last one: every diagonal
/// entry of `c` is first replaced by the mean of the rest of its row, then
/// `alpha_hat_j = sum_k c[j][k] c[k][n-1]`.
pub fn alpha_hat(c: &Matrix) -> Result<Vec<f64>, ModelError> {
    let n = c.rows();
    if n < 2 {
        return Err(ModelError::TooFewPositions { min: 2, got: n });
    }
    let mut m = c.clone();
    for k in 0..n {
        let off: f64 = (0..n).filter(|&l| l != k).map(|l| c[(k, l)]).sum();
        m[(k, k)] = off / (n - 1) as f64;
    }
    let last = n - 1;
    Ok((0..n)
        .map(|j| (0..n).map(|k| m[(j, k)] * m[(k, last)]).sum())
        .collect())
}

/// Row `q` holds `alpha_hat / max(alpha_hat)` computed on the window `0..=q`
/// with `q` as the final item; rows with a zero maximum (or a single key) are zero.
pub fn shape_ratio_matrix(counts: &Matrix) -> Matrix {
    let m = counts.rows();
    let mut out = Matrix::zeros(m, m);
    for q in 1..m {
        let hat = alpha_hat(&counts.leading(q + 1)).expect("window has two positions");
        let max = hat.iter().copied().fold(0.0_f64, f64::max);
        if max > 0.0 {
            for (j, h) in hat.iter().enumerate() {
                out[(q, j)] = h / max;
            }
        }
    }
    out
}

/// `xi = (X W_q)(X W_k)^T / sqrt(d_h)`
pub fn location_xi(x: &Matrix, w_q: &Matrix, w_k: &Matrix) -> Matrix {
    let q = gemm(x, false, w_q, false);
    let k = gemm(x, false, w_k, false);
    let mut xi = gemm(&q, false, &k, true);
    xi.scale_in_place(1.0 / (w_q.cols() as f64).sqrt());
    xi
}

/// `alpha_j = softplus((x_q W_s^Q) . (x_j W_s^K) / sqrt(d_h)) * alpha_hat_j / max(alpha_hat)`
/// over the keys `0..=q`.
pub fn shape_alpha(x: &Matrix, counts: &Matrix, q: usize, w_q: &Matrix, w_k: &Matrix) -> Vec<f64> {
    if q == 0 {
        return vec![0.0];
    }
    let hat = alpha_hat(&counts.leading(q + 1)).expect("q >= 1");
    let max = hat.iter().copied().fold(0.0_f64, f64::max);
    let s = location_xi(x, w_q, w_k);
    (0..=q)
        .map(|j| if max > 0.0 { softplus(s[(q, j)]) * hat[j] / max } else { 0.0 })
        .collect()
}

/// `ReLU(h W1 + b1) W2 + b2`, row-wise.
pub fn ffn(h: &Matrix, w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64]) -> Matrix {
    let mut a = gemm(h, false, w1, false);
    for i in 0..a.rows() {
        for (v, b) in a.row_mut(i).iter_mut().zip(b1) {
            *v = (*v + b).max(0.0);
        }
    }
    let mut out = gemm(&a, false, w2, false);
    for i in 0..out.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(b2) {
            *v += b;
        }
    }
    out
}

/// `r_i = f . E_i` for every non-padding item; entry `k` scores item `k + 1`.
pub fn relevance_scores(f_row: &[f64], item_table: &Matrix) -> Vec<f64> {
    (1..item_table.rows())
        .map(|i| f_row.iter().zip(item_table.row(i)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Scores for an explicit candidate list.
pub fn candidate_scores(f_row: &[f64], item_table: &Matrix, candidates: &[usize]) -> Vec<f64> {
    candidates
        .iter()
        .map(|&i| f_row.iter().zip(item_table.row(i)).map(|(a, b)| a * b).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub loc_q: ParamId,
    pub loc_k: ParamId,
    pub value: ParamId,
    pub shape_q: ParamId,
    pub shape_k: ParamId,
    pub kernel: KernelWeights,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub out_proj: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl BlockParams {
    pub fn register(store: &mut ParamStore, index: usize, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let dh = dim / heads;
        let p = format!("block{index}");
        let heads = (0..heads)
            .map(|h| {
                let hp = format!("{p}.head{h}");
                HeadParams {
                    loc_q: store.add(format!("{hp}.location_q"), fan_in_matrix(dim, dh, rng)),
                    loc_k: store.add(format!("{hp}.location_k"), fan_in_matrix(dim, dh, rng)),
                    value: store.add(format!("{hp}.value"), fan_in_matrix(dim, dh, rng)),
                    shape_q: store.add(format!("{hp}.shape_q"), fan_in_matrix(dim, dh, rng)),
                    shape_k: store.add(format!("{hp}.shape_k"), fan_in_matrix(dim, dh, rng)),
                    kernel: KernelWeights::register(store, &format!("{hp}.kernel"), dim, dh, rng),
                }
            })
            .collect();
        Self {
            heads,
            out_proj: store.add(format!("{p}.out_proj"), fan_in_matrix(dim, dim, rng)),
            ffn_w1: store.add(format!("{p}.ffn.w1"), fan_in_matrix(dim, dim, rng)),
            ffn_b1: store.add(format!("{p}.ffn.b1"), Matrix::zeros(1, dim)),
            ffn_w2: store.add(format!("{p}.ffn.w2"), fan_in_matrix(dim, dim, rng)),
            ffn_b2: store.add(format!("{p}.ffn.b2"), Matrix::zeros(1, dim)),
            ln1_gain: store.add(format!("{p}.norm1.gain"), Matrix::filled(1, dim, 1.0)),
            ln1_bias: store.add(format!("{p}.norm1.bias"), Matrix::zeros(1, dim)),
            ln2_gain: store.add(format!("{p}.norm2.gain"), Matrix::filled(1, dim, 1.0)),
            ln2_bias: store.add(format!("{p}.norm2.bias"), Matrix::zeros(1, dim)),
        }
    }
}

/// Matrices recorded for one head; the `_last` fields belong to the final query row.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    pub xi: Matrix,
    pub z: Matrix,
    pub weights: Matrix,
    pub omega_last: Vec<f64>,
    pub alpha_last: Vec<f64>,
    pub psi: Matrix,
    pub mixture_r: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    /// `[block][head]`
    pub heads: Vec<Vec<HeadTrace>>,
}

pub struct HeadOutput {
    pub hidden: Var,
    /// Kernel correlation over the window, when it was built.
    pub psi: Option<Var>,
    pub trace: Option<HeadTrace>,
}

struct Correlation {
    psi: Var,
    chol: Var,
    mixture: Var,
}

fn correlation_with_retry(
    head: &HeadParams,
    tape: &mut Tape,
    x: Var,
    user: Var,
    ctx: &SequenceContext,
    cfg: &ModelConfig,
) -> Result<Correlation, ModelError> {
    let mut jitter = cfg.kernel.jitter;
    let mut attempt = 0;
    loop {
        let (psi, mixture) = head
            .kernel
            .correlation(tape, x, user, &ctx.counting_base, &cfg.kernel, jitter)?;
        match tape.cholesky(psi) {
            Ok(chol) => return Ok(Correlation { psi, chol, mixture }),
            Err(ModelError::CholeskyFailed { .. }) if attempt < 3 => {
                attempt += 1;
                jitter *= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
}

impl HeadParams {
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        x: Var,
        user: Var,
        ctx: &SequenceContext,
        cfg: &ModelConfig,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<HeadOutput, ModelError> {
        let m = ctx.len();
        let inv_sqrt = 1.0 / (cfg.head_dim() as f64).sqrt();
        let project = |tape: &mut Tape, a: ParamId, b: ParamId| {
            let wa = tape.param(a);
            let wb = tape.param(b);
            let qa = tape.matmul(x, wa);
            let kb = tape.matmul(x, wb);
            let dot = tape.matmul_t(qa, false, kb, true);
            tape.scale(dot, inv_sqrt)
        };
        let xi = project(tape, self.loc_q, self.loc_k);
        let wv = tape.param(self.value);
        let v = tape.matmul(x, wv);

        let sampling = !cfg.baseline && opts.mode.samples();
        let mean_shift = !cfg.baseline && opts.mode == ForwardMode::EvalMeanShift;
        let mut psi_out = None;
        let mut trace_parts = None;
        let z = if sampling || mean_shift || opts.trace {
            let omega = match opts.fixed_omega {
                Some(w) => tape.constant(Matrix::filled(m, m, w)),
                None => self.kernel.omega(tape, x),
            };
            let alpha = if opts.zero_shape {
                tape.constant(Matrix::zeros(m, m))
            } else {
                let s_logits = project(tape, self.shape_q, self.shape_k);
                let s = tape.softplus(s_logits);
                let ratio = tape.constant(ctx.shape_ratio.clone());
                tape.mul(s, ratio)
            };
            let a2 = tape.mul(alpha, alpha);
            let a2p1 = tape.add_scalar(a2, 1.0);
            // sqrt(1 - delta^2) = (1 + alpha^2)^{-1/2}
            let tail = tape.powf(a2p1, -0.5);
            let delta = tape.mul(alpha, tail);

            let corr = if sampling || opts.trace {
                Some(correlation_with_retry(self, tape, x, user, ctx, cfg)?)
            } else {
                None
            };
            psi_out = corr.as_ref().map(|c| c.psi);
            trace_parts = Some((omega, alpha, corr.as_ref().map(|c| (c.psi, c.mixture))));

            if sampling {
                let corr = corr.expect("built when sampling");
                let mut y0 = Matrix::zeros(m, m);
                let mut eps = Matrix::zeros(m, m);
                for q in 0..m {
                    let draw: f64 = rng.sample(StandardNormal);
                    y0.row_mut(q).fill(draw.abs());
                    for k in 0..=q {
                        eps[(q, k)] = rng.sample(StandardNormal);
                    }
                }
                if cfg.stochastic_rows == StochasticRows::LastOnly {
                    for q in 0..m.saturating_sub(1) {
                        y0.row_mut(q).fill(0.0);
                        eps.row_mut(q).fill(0.0);
                    }
                }
                let y0 = tape.constant(y0);
                let eps = tape.constant(eps);
                let y = tape.matmul_t(eps, false, corr.chol, true);
                let skew = tape.mul(delta, y0);
                let sym = tape.mul(tail, y);
                let zhat = tape.add(skew, sym);
                let spread = tape.mul(omega, zhat);
                tape.add(xi, spread)
            } else if mean_shift {
                let shift = tape.mul(omega, delta);
                let shift = tape.scale(shift, (2.0 / std::f64::consts::PI).sqrt());
                tape.add(xi, shift)
            } else {
                xi
            }
        } else {
            xi
        };

        let weights = tape.softmax_rows(z, &ctx.causal)?;
        let hidden = tape.matmul(weights, v);

        let trace = opts.trace.then(|| {
            let (omega, alpha, corr) = trace_parts.expect("trace builds all parts");
            let last = m - 1;
            let (psi, mixture) = corr.expect("trace builds the correlation");
            let r = tape.value(mixture).as_slice();
            HeadTrace {
                xi: tape.value(xi).clone(),
                z: tape.value(z).clone(),
                weights: tape.value(weights).clone(),
                omega_last: tape.value(omega).row(last).to_vec(),
                alpha_last: tape.value(alpha).row(last).to_vec(),
                psi: tape.value(psi).clone(),
                mixture_r: [r[0], r[1], r[2]],
            }
        });
        Ok(HeadOutput {
            hidden,
            psi: psi_out,
            trace,
        })
    }
}

fn dropout<R: Rng>(tape: &mut Tape, a: Var, rate: f64, rng: &mut R) -> Var {
    let (rows, cols) = tape.value(a).shape();
    let keep = 1.0 - rate;
    let mask = Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    );
    let mask = tape.constant(mask);
    tape.mul(a, mask)
}

pub struct BlockOutput {
    pub hidden: Var,
    /// One correlation per head (if built).
    pub psi: Vec<Option<Var>>,
    pub traces: Vec<HeadTrace>,
}

impl BlockParams {
    /// `a = LN(x + Drop(MHA(x)))`, `out = LN(a + Drop(FFN(a)))`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        x: Var,
        user: Var,
        ctx: &SequenceContext,
        cfg: &ModelConfig,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<BlockOutput, ModelError> {
        let mut hidden = Vec::with_capacity(self.heads.len());
        let mut psi = Vec::with_capacity(self.heads.len());
        let mut traces = Vec::new();
        for head in &self.heads {
            let out = head.forward(tape, x, user, ctx, cfg, opts, rng)?;
            hidden.push(out.hidden);
            psi.push(out.psi);
            traces.extend(out.trace);
        }
        let concat = tape.concat_cols(&hidden);
        let wo = tape.param(self.out_proj);
        let mut attn = tape.matmul(concat, wo);
        let training = opts.mode.is_training() && cfg.dropout > 0.0;
        if training {
            attn = dropout(tape, attn, cfg.dropout, rng);
        }
        let res = tape.add(x, attn);
        let (g1, b1) = (tape.param(self.ln1_gain), tape.param(self.ln1_bias));
        let a = tape.layer_norm(res, g1, b1, LAYER_NORM_EPS);

        let w1 = tape.param(self.ffn_w1);
        let bias1 = tape.param(self.ffn_b1);
        let w2 = tape.param(self.ffn_w2);
        let bias2 = tape.param(self.ffn_b2);
        let h1 = tape.matmul(a, w1);
        let h1 = tape.add_row(h1, bias1);
        let h1 = tape.relu(h1);
        let h2 = tape.matmul(h1, w2);
        let mut f = tape.add_row(h2, bias2);
        if training {
            f = dropout(tape, f, cfg.dropout, rng);
        }
        let res2 = tape.add(a, f);
        let (g2, b2) = (tape.param(self.ln2_gain), tape.param(self.ln2_bias));
        let out = tape.layer_norm(res2, g2, b2, LAYER_NORM_EPS);
        Ok(BlockOutput {
            hidden: out,
            psi,
            traces,
        })
    }
}
