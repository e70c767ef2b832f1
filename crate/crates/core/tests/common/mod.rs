#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rksa::attention::{ForwardMode, ForwardOptions};
use rksa::corpus::{CoocStats, SplitDataset, UserSplit};
use rksa::model::Rksa;
use rksa::train::TrainConfig;

/// One user whose whole 10-item sequence is training data, in a catalog of `n_items`.
pub fn single_sequence(n_items: usize, seed: u64) -> (SplitDataset, CoocStats, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (1..=n_items).collect();
    pool.shuffle(&mut rng);
    let seq = pool[..10].to_vec();
    let mut history = seq.clone();
    history.sort_unstable();
    let split = SplitDataset {
        n_users: 1,
        n_items,
        users: vec![UserSplit {
            user: 0,
            train: seq.clone(),
            valid_target: seq[9],
            test_target: seq[9],
            history,
        }],
    };
    let cooc = CoocStats::from_sequences(n_items, [seq.as_slice()]);
    (split, cooc, seq)
}

pub fn overfit_config() -> TrainConfig {
    TrainConfig {
        batch_size: 1,
        dropout: 0.0,
        lr: 0.01,
        max_epochs: 500,
        max_steps: Some(500),
        eval_every: 1000,
        ..TrainConfig::default()
    }
}

/// Fraction of next-item positions whose target strictly outscores every item
/// outside `seq`, the evaluation protocol's candidate pool.
pub fn next_item_hit1(model: &Rksa, cooc: &CoocStats, user: usize, seq: &[usize]) -> f64 {
    let opts = ForwardOptions::new(ForwardMode::EvalLocation);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = 0;
    for t in 1..seq.len() {
        let scores = model.score_all(user, &seq[..t], cooc, &opts, &mut rng).unwrap();
        let target = scores[seq[t] - 1];
        let others = scores.iter().enumerate().filter(|(i, _)| !seq.contains(&(i + 1)));
        if others.into_iter().all(|(_, &s)| s < target) {
            hits += 1;
        }
    }
    hits as f64 / (seq.len() - 1) as f64
}

/// `n_users` random sequences of length 3..=max_seq over `n_items`.
pub fn random_split(n_users: usize, n_items: usize, max_seq: usize, seed: u64) -> SplitDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..n_users)
        .map(|u| {
            let len = rng.gen_range(3..=max_seq);
            let mut pool: Vec<usize> = (1..=n_items).collect();
            pool.shuffle(&mut rng);
            let seq = &pool[..len];
            let mut history = seq.to_vec();
            history.sort_unstable();
            UserSplit {
                user: u,
                train: seq[..len - 2].to_vec(),
                valid_target: seq[len - 2],
                test_target: seq[len - 1],
                history,
            }
        })
        .collect();
    SplitDataset {
        n_users,
        n_items,
        users,
    }
}
