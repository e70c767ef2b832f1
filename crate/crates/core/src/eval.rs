//! Sampled-negative ranking evaluation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{ForwardMode, ForwardOptions};
use crate::corpus::{sample_negatives, CoocStats, SplitDataset, SplitPart};
use crate::error::Result;
use crate::model::Rksa;
use crate::rng::stream;

/// `1 + #{others scoring >= target}`: ties count against the target.
pub fn rank_target(scores: &[f64], target_index: usize) -> usize {
    let t = scores[target_index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != target_index && !(s < t))
        .count()
}

pub fn hit_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let gain: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    gain / ranks.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: ForwardMode,
    pub seed: u64,
    pub k_neg: usize,
    pub ks: Vec<usize>,
    /// Rank against every item outside the user's history instead of sampled negatives.
    pub full_catalog: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: ForwardMode::EvalLocation,
            seed: 0,
            k_neg: 100,
            ks: vec![1, 5, 10],
            full_catalog: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRank {
    pub user: usize,
    pub target: usize,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mode: ForwardMode,
    pub seed: u64,
    pub n_users: usize,
    pub hit: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub per_user_ranks: Vec<UserRank>,
    /// Occurrence decile of the target (0 = rarest) to mean rank.
    pub frequency_buckets: BTreeMap<usize, f64>,
}

impl EvalMetrics {
    pub fn from_ranks(per_user_ranks: Vec<UserRank>, ks: &[usize], deciles: &[usize], mode: ForwardMode, seed: u64) -> Self {
        let ranks: Vec<usize> = per_user_ranks.iter().map(|r| r.rank).collect();
        let hit = ks.iter().map(|&k| (k, hit_at_k(&ranks, k))).collect();
        let ndcg = ks.iter().map(|&k| (k, ndcg_at_k(&ranks, k))).collect();
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &per_user_ranks {
            let e = sums.entry(deciles[r.target]).or_default();
            e.0 += r.rank as f64;
            e.1 += 1;
        }
        Self {
            mode,
            seed,
            n_users: ranks.len(),
            hit,
            ndcg,
            per_user_ranks,
            frequency_buckets: sums.into_iter().map(|(b, (s, n))| (b, s / n as f64)).collect(),
        }
    }

    pub fn hit_at(&self, k: usize) -> Option<f64> {
        self.hit.get(&k).copied()
    }
}

/// Decile (0..=9) of every item id by training occurrence, ties resolved by id.
pub fn occurrence_deciles(cooc: &CoocStats) -> Vec<usize> {
    let n = cooc.n_items();
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by_key(|&i| (cooc.item_count(i), i));
    let mut deciles = vec![0; n + 1];
    for (pos, &i) in order.iter().enumerate() {
        deciles[i] = pos * 10 / n.max(1);
    }
    deciles
}

/// Ranks each user's held-out item against sampled negatives. Negatives and
/// any stochastic forward noise are drawn from streams keyed by `(seed, user)`.
pub fn evaluate(
    model: &Rksa,
    data: &SplitDataset,
    cooc: &CoocStats,
    part: SplitPart,
    cfg: &EvalConfig,
) -> Result<EvalMetrics> {
    let opts = ForwardOptions::new(cfg.mode);
    let ranks = (0..data.users.len())
        .into_par_iter()
        .map(|idx| {
            let user = &data.users[idx];
            let (prefix, target) = data.eval_case(idx, part);
            let mut rng = stream(&[cfg.seed, user.user as u64]);
            let negatives = if cfg.full_catalog {
                (1..=data.n_items).filter(|&i| !user.in_history(i)).collect()
            } else {
                sample_negatives(&user.history, data.n_items, cfg.k_neg, &mut rng)?
            };
            let mut candidates = Vec::with_capacity(negatives.len() + 1);
            candidates.push(target);
            candidates.extend(negatives);
            let scores = model.score_candidates(user.user, &prefix, cooc, &candidates, &opts, &mut rng)?;
            Ok(UserRank {
                user: user.user,
                target,
                rank: rank_target(&scores, 0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMetrics::from_ranks(ranks, &cfg.ks, &occurrence_deciles(cooc), cfg.mode, cfg.seed))
}
