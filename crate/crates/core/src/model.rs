//! The full recommender: embeddings, a stack of attention blocks and the
//! tied-weight output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    candidate_scores, relevance_scores, AttentionTrace, BlockParams, ForwardOptions, SequenceContext,
};
use crate::autograd::{Tape, Var};
use crate::config::ModelConfig;
use crate::corpus::{CoocStats, TrainRow};
use crate::embed::EmbeddingTables;
use crate::error::{Error, ModelError, Result};
use crate::loss::{bce_sum, rank_term};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct Rksa {
    config: ModelConfig,
    params: ParamStore,
    embed: EmbeddingTables,
    blocks: Vec<BlockParams>,
}

pub struct ModelOutput {
    /// `[m, d]` final block output.
    pub hidden: Var,
    /// Every correlation built during the pass, in block-major order.
    pub psi: Vec<Var>,
    pub trace: Option<AttentionTrace>,
}

/// Tape nodes of one training sequence's loss terms.
pub struct SequenceLoss {
    /// Summed (not averaged) BCE over the sequence's positions.
    pub bce: Var,
    /// One ListMLE term per block and head with at least two ranked keys.
    pub rank: Vec<Var>,
}

/// The trailing `max_len` items and their offset in the padded layout.
pub fn window(items: &[usize], max_len: usize) -> (&[usize], usize) {
    let start = items.len().saturating_sub(max_len);
    let w = &items[start..];
    (w, max_len - w.len())
}

impl Rksa {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embed = EmbeddingTables::register(
            &mut params,
            config.n_items,
            config.n_users,
            config.max_len,
            config.dim,
            &mut rng,
        );
        let blocks = (0..config.blocks)
            .map(|b| BlockParams::register(&mut params, b, config.dim, config.heads, &mut rng))
            .collect();
        Ok(Self {
            config,
            params,
            embed,
            blocks,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Corrupt(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((_, want, w), (_, got, g)) in model.params.iter().zip(params.iter()) {
            if want != got || w.shape() != g.shape() {
                return Err(Error::Corrupt(format!(
                    "parameter {got} {:?} does not match {want} {:?}",
                    g.shape(),
                    w.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embed(&self) -> &EmbeddingTables {
        &self.embed
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    /// Forward pass over an unpadded sequence placed at `offset`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        user: usize,
        items: &[usize],
        offset: usize,
        ctx: &SequenceContext,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<ModelOutput, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let mut x = self.embed.inputs(tape, items, offset)?;
        let u = self.embed.user_row(tape, user)?;
        let mut psi = Vec::new();
        let mut traces = Vec::new();
        for block in &self.blocks {
            let out = block.forward(tape, x, u, ctx, &self.config, opts, rng)?;
            x = out.hidden;
            psi.extend(out.psi.into_iter().flatten());
            traces.push(out.traces);
        }
        Ok(ModelOutput {
            hidden: x,
            psi,
            trace: opts.trace.then_some(AttentionTrace { heads: traces }),
        })
    }

    /// Builds the loss terms of one training row on `tape`.
    pub fn sequence_loss<R: Rng>(
        &self,
        tape: &mut Tape,
        row: &TrainRow<'_>,
        cooc: &CoocStats,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<SequenceLoss, ModelError> {
        let ctx = SequenceContext::new(row.items, cooc);
        let out = self.forward(tape, row.user, row.items, row.offset, &ctx, opts, rng)?;
        let bce = bce_sum(tape, out.hidden, self.embed.item, row.targets, row.negatives);
        let rank = if self.config.baseline {
            Vec::new()
        } else {
            out.psi.iter().filter_map(|&p| rank_term(tape, p, &ctx)).collect()
        };
        Ok(SequenceLoss { bce, rank })
    }

    /// Number of ListMLE terms a training row of this length contributes.
    pub fn rank_terms_for(&self, len: usize) -> usize {
        if self.config.baseline || len < 3 {
            0
        } else {
            self.config.blocks * self.config.heads
        }
    }

    /// Final-position representation for a history (trimmed to `max_len`).
    pub fn final_state<R: Rng>(
        &self,
        user: usize,
        history: &[usize],
        cooc: &CoocStats,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<AttentionTrace>), ModelError> {
        let (items, offset) = window(history, self.config.max_len);
        let ctx = SequenceContext::new(items, cooc);
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, user, items, offset, &ctx, opts, rng)?;
        let hidden = tape.value(out.hidden);
        Ok((hidden.row(hidden.rows() - 1).to_vec(), out.trace))
    }

    /// Scores of `candidates` as the next item after `history`.
    pub fn score_candidates<R: Rng>(
        &self,
        user: usize,
        history: &[usize],
        cooc: &CoocStats,
        candidates: &[usize],
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<Vec<f64>, ModelError> {
        let (f, _) = self.final_state(user, history, cooc, opts, rng)?;
        let table = self.params.get(self.embed.item);
        if let Some(&bad) = candidates.iter().find(|&&c| c >= table.rows()) {
            return Err(ModelError::IdOutOfRange {
                what: "item",
                id: bad,
                size: table.rows(),
            });
        }
        Ok(candidate_scores(&f, table, candidates))
    }

    /// Scores of every non-padding item; entry `k` is item `k + 1`.
    pub fn score_all<R: Rng>(
        &self,
        user: usize,
        history: &[usize],
        cooc: &CoocStats,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<Vec<f64>, ModelError> {
        let (f, _) = self.final_state(user, history, cooc, opts, rng)?;
        Ok(relevance_scores(&f, self.params.get(self.embed.item)))
    }
}
