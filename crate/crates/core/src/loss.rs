//! Next-item BCE with sampled negatives, the ListMLE co-occurrence ranking
//! loss on the learned correlation, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::attention::SequenceContext;
use crate::autograd::{list_mle_value, Tape, Var};
use crate::params::ParamId;
use crate::tensor::log_sigmoid;

pub const DEFAULT_LAMBDA_R: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_z: f64,
    pub l_rank: f64,
    pub total: f64,
    pub lambda_r: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.l_z.is_finite() && self.l_rank.is_finite() && self.total.is_finite()
    }
}

pub fn total_loss(l_z: f64, l_rank: f64, lambda_r: f64) -> LossReport {
    LossReport {
        l_z,
        l_rank,
        total: l_z + lambda_r * l_rank,
        lambda_r,
    }
}

/// `-(sum_t log s(pos_t) + sum_{t, k} log(1 - s(neg_tk))) / #positions`
pub fn prediction_loss(pos: &[f64], neg: &[Vec<f64>]) -> f64 {
    assert_eq!(pos.len(), neg.len(), "one negative list per position");
    if pos.is_empty() {
        return 0.0;
    }
    let sum: f64 = pos
        .iter()
        .zip(neg)
        .map(|(&p, ns)| log_sigmoid(p) + ns.iter().map(|&n| log_sigmoid(-n)).sum::<f64>())
        .sum();
    -sum / pos.len() as f64
}

/// Positions sorted by descending count, ties by ascending position.
pub fn rank_target_order(cooc_row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cooc_row.len()).collect();
    order.sort_by(|&a, &b| cooc_row[b].total_cmp(&cooc_row[a]).then(a.cmp(&b)));
    order
}

/// ListMLE of the target order implied by `cooc_row` under scores `psi_row`;
/// zero for lists shorter than two.
pub fn cooc_rank_loss(psi_row: &[f64], cooc_row: &[f64]) -> f64 {
    assert_eq!(psi_row.len(), cooc_row.len());
    if psi_row.len() < 2 {
        return 0.0;
    }
    list_mle_value(psi_row, &rank_target_order(cooc_row))
}

/// Summed BCE terms of one sequence: `hidden` is `[m, d]`, one target and a
/// list of negatives per row.
pub fn bce_sum(tape: &mut Tape, hidden: Var, item_table: ParamId, targets: &[usize], negatives: &[Vec<usize>]) -> Var {
    let pos = tape.gather(item_table, targets);
    let pos = tape.row_dot(hidden, pos);
    let pos = tape.log_sigmoid(pos);
    let mut total = tape.sum_all(pos);
    let k = negatives.first().map_or(0, Vec::len);
    for slot in 0..k {
        let ids: Vec<usize> = negatives.iter().map(|n| n[slot]).collect();
        let neg = tape.gather(item_table, &ids);
        let neg = tape.row_dot(hidden, neg);
        let neg = tape.scale(neg, -1.0);
        let neg = tape.log_sigmoid(neg);
        let neg = tape.sum_all(neg);
        total = tape.add(total, neg);
    }
    tape.scale(total, -1.0)
}

/// ListMLE on the final query row of `psi` over keys `j < q`, or `None` when
/// fewer than two keys precede the query.
pub fn rank_term(tape: &mut Tape, psi: Var, ctx: &SequenceContext) -> Option<Var> {
    let q = ctx.len().checked_sub(1)?;
    if q < 2 {
        return None;
    }
    let cooc_row: Vec<f64> = (0..q).map(|j| ctx.counts[(q, j)]).collect();
    let idx: Vec<(usize, usize)> = (0..q).map(|j| (q, j)).collect();
    let scores = tape.select(psi, &idx);
    Some(tape.list_mle(scores, &rank_target_order(&cooc_row)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_examples() {
        assert!((prediction_loss(&[0.0], &[vec![0.0]]) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(prediction_loss(&[800.0], &[vec![-800.0]]) < 1e-300);
        assert!(prediction_loss(&[-3.0, 2.0], &[vec![1.0, 4.0], vec![0.5, -1.0]]) >= 0.0);
        assert_eq!(prediction_loss(&[], &[]), 0.0);
    }

    #[test]
    fn prediction_decreases_with_positive_score() {
        let mut last = f64::INFINITY;
        for k in -40..40 {
            let l = prediction_loss(&[k as f64 * 0.25], &[vec![0.3]]);
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(cooc_rank_loss(&[0.7], &[3.0]), 0.0);
        let (a, b) = (0.3_f64, -0.2_f64);
        let want = (1.0 + (b - a).exp()).ln();
        assert!((cooc_rank_loss(&[a, b], &[5.0, 1.0]) - want).abs() < 1e-15);
        assert!(cooc_rank_loss(&[60.0, 30.0, 0.0], &[3.0, 2.0, 1.0]) < 1e-12);
    }

    #[test]
    fn ties_go_to_the_earlier_position() {
        assert_eq!(rank_target_order(&[1.0, 3.0, 1.0, 3.0, 0.0]), vec![1, 3, 0, 2, 4]);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.0, 2.0, 0.0).total, 1.0);
        let r = total_loss(1.0, 2.0, 0.001);
        assert!((r.total - 1.002).abs() < 1e-15);
        assert!(r.is_finite());
        assert!(!total_loss(f64::NAN, 0.0, 0.001).is_finite());
    }
}
