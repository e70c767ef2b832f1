//! Optimization: batched gradients, Adam, clipping, early stopping and the
//! finite-difference gradient check.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{ForwardMode, ForwardOptions};
use crate::autograd::Tape;
use crate::checkpoint::Checkpoint;
use crate::config::{KernelConfig, KernelSet, ModelConfig, StochasticRows};
use crate::corpus::{make_batches, Batch, CoocStats, SplitDataset, SplitPart};
use crate::error::{Error, ModelError, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::loss::{total_loss, LossReport, DEFAULT_LAMBDA_R};
use crate::model::Rksa;
use crate::params::{Gradients, ParamStore};
use crate::rng::stream;
use crate::tensor::Matrix;

/// Rows of a batch are split into this many fixed chunks whose gradients are
/// summed in order, so results do not depend on the thread count.
const GRAD_CHUNKS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    pub lr: f64,
    pub lambda_r: f64,
    pub max_len: usize,
    pub k_neg_train: usize,
    pub k_neg_eval: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub lr_decay_factor: f64,
    pub eval_every: usize,
    pub clip_norm: f64,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub kernel: KernelConfig,
    pub stochastic_rows: StochasticRows,
    pub baseline: bool,
    pub eval_mode: ForwardMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            dim: 64,
            blocks: 2,
            heads: 1,
            dropout: 0.5,
            lr: 0.001,
            lambda_r: DEFAULT_LAMBDA_R,
            max_len: 50,
            k_neg_train: 1,
            k_neg_eval: 100,
            max_epochs: 200,
            patience: 5,
            seed: 42,
            lr_decay_factor: 0.5,
            eval_every: 1,
            clip_norm: 5.0,
            max_steps: None,
            kernel: KernelConfig::default(),
            stochastic_rows: StochasticRows::All,
            baseline: false,
            eval_mode: ForwardMode::EvalLocation,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, n_items: usize, n_users: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            n_users,
            dim: self.dim,
            heads: self.heads,
            blocks: self.blocks,
            max_len: self.max_len,
            dropout: self.dropout,
            kernel: self.kernel,
            stochastic_rows: self.stochastic_rows,
            baseline: self.baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("k_neg_train", self.k_neg_train),
            ("k_neg_eval", self.k_neg_eval),
            ("max_epochs", self.max_epochs),
            ("eval_every", self.eval_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        let rates = [("lr", self.lr), ("clip_norm", self.clip_norm)];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_r must be >= 0, got {}", self.lambda_r)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        self.model_config(1, 1).validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let tensors = params.tensors_mut().iter_mut();
        let moments = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut());
        for ((p, (m, v)), g) in tensors.zip(moments).zip(grads.tensors()) {
            let it = p.as_mut_slice().iter_mut().zip(m.as_mut_slice()).zip(v.as_mut_slice());
            for (((p, m), v), &g) in it.zip(g.as_slice()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so the global norm is at most `max_norm`; returns the norm before.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

pub struct BatchResult {
    pub grads: Gradients,
    pub report: LossReport,
}

/// Loss (and optionally gradients) of one batch. The noise of row `b` comes
/// from the stream `(noise_key, b)`, so calls with the same key replay it.
pub fn batch_objective(
    model: &Rksa,
    batch: &Batch,
    cooc: &CoocStats,
    lambda_r: f64,
    opts: &ForwardOptions,
    noise_key: [u64; 3],
    with_grads: bool,
) -> Result<BatchResult, ModelError> {
    let rows = batch.len();
    let valid = batch.valid_positions();
    if valid == 0 {
        return Err(ModelError::EmptySequence);
    }
    let n_rank: usize = (0..rows).map(|b| model.rank_terms_for(batch.row(b).items.len())).sum();
    let w_bce = 1.0 / valid as f64;
    let w_rank = if n_rank > 0 { 1.0 / n_rank as f64 } else { 0.0 };
    let chunk = rows.div_ceil(GRAD_CHUNKS).max(1);
    let starts: Vec<usize> = (0..rows).step_by(chunk).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let mut grads = with_grads.then(|| model.params().zeros_like());
            let (mut bce, mut rank) = (0.0, 0.0);
            for b in start..(start + chunk).min(rows) {
                let row = batch.row(b);
                let mut rng = stream(&[noise_key[0], noise_key[1], noise_key[2], b as u64]);
                let mut tape = Tape::new(model.params());
                let terms = model.sequence_loss(&mut tape, &row, cooc, opts, &mut rng)?;
                bce += tape.value(terms.bce)[(0, 0)];
                let mut root = tape.scale(terms.bce, w_bce);
                for &r in &terms.rank {
                    rank += tape.value(r)[(0, 0)];
                    let scaled = tape.scale(r, lambda_r * w_rank);
                    root = tape.add(root, scaled);
                }
                if let Some(g) = grads.as_mut() {
                    tape.backward(root, g);
                }
            }
            Ok((grads, bce, rank))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut grads = model.params().zeros_like();
    let (mut bce, mut rank) = (0.0, 0.0);
    for (g, b, r) in parts {
        if let Some(g) = g {
            grads.accumulate(&g);
        }
        bce += b;
        rank += r;
    }
    Ok(BatchResult {
        grads,
        report: total_loss(bce * w_bce, rank * w_rank, lambda_r),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub l_z: f64,
    pub l_rank: f64,
    pub total: f64,
    pub lr: f64,
    pub val_hit10: Option<f64>,
    pub val_ndcg10: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    Patience,
}

pub struct TrainOutcome {
    /// State at the best validation evaluation (or the final state if none ran).
    pub best: Checkpoint,
    pub best_val_hit10: Option<f64>,
    pub final_model: Rksa,
    pub log: Vec<LogRecord>,
    pub stop: StopReason,
}

fn describe_batch(batch: &Batch, report: &LossReport) -> String {
    let rows: Vec<String> = (0..batch.len())
        .map(|b| {
            let r = batch.row(b);
            format!("user {} items {:?} targets {:?}", r.user, r.items, r.targets)
        })
        .collect();
    format!(
        "l_z {} l_rank {} total {}; batch: {}",
        report.l_z,
        report.l_rank,
        report.total,
        rows.join("; ")
    )
}

/// Trains from scratch. Each record is also written as a JSON line to `log_sink`.
pub fn train(
    cfg: &TrainConfig,
    data: &SplitDataset,
    cooc: &CoocStats,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(data.n_items, data.n_users);
    let mut model = Rksa::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(model.params());
    let mut lr = cfg.lr;
    let mut step: u64 = 0;
    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stalls = 0;
    let mut stop = StopReason::MaxEpochs;
    let opts = ForwardOptions::new(ForwardMode::TrainStochastic);
    let eval_cfg = EvalConfig {
        mode: cfg.eval_mode,
        seed: cfg.seed,
        k_neg: cfg.k_neg_eval,
        ..EvalConfig::default()
    };
    let mut emit = |rec: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        if let Some(w) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        log.push(rec);
        Ok(())
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut batch_rng = stream(&[cfg.seed, epoch as u64, u64::MAX]);
        let batches = make_batches(data, cfg.batch_size, cfg.max_len, cfg.k_neg_train, &mut batch_rng)?;
        let mut last = None;
        for batch in &batches {
            if cfg.max_steps.is_some_and(|m| step as usize >= m) {
                stop = StopReason::MaxSteps;
                break 'epochs;
            }
            let key = [cfg.seed, epoch as u64, step];
            let BatchResult { mut grads, report } =
                batch_objective(&model, batch, cooc, cfg.lambda_r, &opts, key, true)?;
            if !report.is_finite() || !grads.is_finite() {
                return Err(ModelError::NonFinite {
                    what: format!("loss at epoch {epoch} step {step}: {}", describe_batch(batch, &report)),
                }
                .into());
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(model.params_mut(), &grads, lr);
            let embed = *model.embed();
            embed.clear_padding(model.params_mut());
            step += 1;
            let rec = LogRecord {
                epoch,
                step,
                l_z: report.l_z,
                l_rank: report.l_rank,
                total: report.total,
                lr,
                val_hit10: None,
                val_ndcg10: None,
            };
            emit(rec.clone(), &mut log)?;
            last = Some(rec);
        }
        if epoch % cfg.eval_every != 0 {
            continue;
        }
        let metrics = evaluate(&model, data, cooc, SplitPart::Valid, &eval_cfg)?;
        let hit10 = metrics.hit_at(10).unwrap_or(0.0);
        let ndcg10 = metrics.ndcg.get(&10).copied().unwrap_or(0.0);
        let base = last.unwrap_or(LogRecord {
            epoch,
            step,
            l_z: f64::NAN,
            l_rank: f64::NAN,
            total: f64::NAN,
            lr,
            val_hit10: None,
            val_ndcg10: None,
        });
        emit(
            LogRecord {
                val_hit10: Some(hit10),
                val_ndcg10: Some(ndcg10),
                ..base
            },
            &mut log,
        )?;
        if best.as_ref().is_none_or(|(b, _)| hit10 > *b) {
            let ck = Checkpoint::capture(&model, cfg, &adam, epoch, step, lr);
            best = Some((hit10, ck));
            stalls = 0;
        } else {
            stalls += 1;
            lr *= cfg.lr_decay_factor;
            if stalls > cfg.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let epoch = log.last().map_or(0, |r| r.epoch);
    let (best_val_hit10, best) = match best {
        Some((v, ck)) => (Some(v), ck),
        None => (None, Checkpoint::capture(&model, cfg, &adam, epoch, step, lr)),
    };
    Ok(TrainOutcome {
        best,
        best_val_hit10,
        final_model: model,
        log,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| !(t.max_rel_error < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub lambda_r: f64,
    pub kernels: KernelSet,
    /// Zero every tensor except the embedding tables.
    pub zero_init: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            lambda_r: 1.0,
            kernels: KernelSet::ALL,
            zero_init: false,
        }
    }
}

/// The tiny fixture: `d = 8`, five positions, one block and one head.
pub fn grad_check_fixture(cfg: &GradCheckConfig) -> Result<(Rksa, Batch, CoocStats)> {
    let mut mc = ModelConfig::new(9, 3);
    mc.dim = 8;
    mc.heads = 1;
    mc.blocks = 1;
    mc.max_len = 5;
    mc.kernel.active = cfg.kernels;
    let mut model = Rksa::new(mc, cfg.seed)?;
    if cfg.zero_init {
        let embed = *model.embed();
        let keep = [embed.item, embed.positional, embed.user];
        let ids: Vec<_> = model.params().ids().filter(|id| !keep.contains(id)).collect();
        for id in ids {
            model.params_mut().get_mut(id).fill(0.0);
        }
    } else {
        // Nonzero mixture heads so every kernel path carries gradient.
        let mut rng = stream(&[cfg.seed, 1]);
        let ids: Vec<_> = model
            .params()
            .iter()
            .filter(|(_, n, _)| n.contains("mixture"))
            .map(|(id, _, _)| id)
            .collect();
        for id in ids {
            let (r, c) = model.params().get(id).shape();
            *model.params_mut().get_mut(id) = crate::params::normal_matrix(r, c, 0.5, &mut rng);
        }
    }
    let seqs: [&[usize]; 4] = [&[1, 2, 3, 4, 5, 6], &[2, 3, 1, 7], &[4, 5, 6, 8, 9], &[1, 3, 5, 7, 9]];
    let cooc = CoocStats::from_sequences(9, seqs);
    let batch = Batch {
        item_ids: vec![vec![1, 2, 3, 4, 5], vec![0, 0, 2, 3, 1]],
        targets: vec![vec![2, 3, 4, 5, 6], vec![0, 0, 3, 1, 7]],
        negatives: vec![
            vec![vec![7, 8], vec![9, 1], vec![8, 6], vec![7, 9], vec![8, 1]],
            vec![vec![0, 0], vec![0, 0], vec![5, 9], vec![8, 4], vec![6, 5]],
        ],
        user_ids: vec![0, 2],
        pad_mask: vec![vec![true; 5], vec![false, false, true, true, true]],
    };
    Ok((model, batch, cooc))
}

/// Central-difference comparison of `analytic` against the batch objective.
pub fn compare_gradients(
    model: &Rksa,
    batch: &Batch,
    cooc: &CoocStats,
    cfg: &GradCheckConfig,
    analytic: &Gradients,
) -> Result<GradCheckReport> {
    let opts = ForwardOptions::new(ForwardMode::TrainStochastic);
    let key = [cfg.seed, 0, 0];
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let n = model.params().get(id).len();
        let (mut rel, mut abs) = (0.0_f64, 0.0_f64);
        for k in 0..n {
            let orig = model.params().get(id).as_slice()[k];
            let mut eval_at = |v: f64| -> Result<f64> {
                probe.params_mut().get_mut(id).as_mut_slice()[k] = v;
                Ok(batch_objective(&probe, batch, cooc, cfg.lambda_r, &opts, key, false)?
                    .report
                    .total)
            };
            let plus = eval_at(orig + cfg.step)?;
            let minus = eval_at(orig - cfg.step)?;
            eval_at(orig)?;
            let fd = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.get(id).as_slice()[k];
            let err = (a - fd).abs();
            abs = abs.max(err);
            rel = rel.max(err / a.abs().max(fd.abs()).max(cfg.floor));
        }
        tensors.push(TensorCheck {
            name: model.params().name(id).to_string(),
            entries: n,
            max_rel_error: rel,
            max_abs_error: abs,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        tensors,
    })
}

/// Analytic gradient of the fixture's objective under replayed noise.
pub fn analytic_gradients(model: &Rksa, batch: &Batch, cooc: &CoocStats, cfg: &GradCheckConfig) -> Result<Gradients> {
    let opts = ForwardOptions::new(ForwardMode::TrainStochastic);
    Ok(batch_objective(model, batch, cooc, cfg.lambda_r, &opts, [cfg.seed, 0, 0], true)?.grads)
}

pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (model, batch, cooc) = grad_check_fixture(cfg)?;
    let analytic = analytic_gradients(&model, &batch, &cooc, cfg)?;
    compare_gradients(&model, &batch, &cooc, cfg, &analytic)
}

/// Adds `delta` to the first entry of the named tensor.
pub fn corrupt_gradient(grads: &mut Gradients, model: &Rksa, name: &str, delta: f64) -> Option<()> {
    let id = model.params().find(name)?;
    let t: &mut Matrix = grads.get_mut(id);
    t.as_mut_slice()[0] += delta;
    Some(())
}
