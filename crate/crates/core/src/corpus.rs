//! Interaction ingestion, per-user sequences, leave-one-out splits,
//! co-occurrence statistics, negative sampling and padded batches.
//!
//! Item ids are dense in `1..=n_items`; id 0 is the padding item. User ids
//! are dense in `0..n_users`.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const MIN_SEQUENCE_LEN: usize = 3;
pub const FORMAT_VERSION: u32 = 1;

/// Bijection between raw ids from the input file and dense ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdMap {
    raw: Vec<u64>,
    offset: usize,
    #[serde(skip)]
    index: HashMap<u64, usize>,
}

impl IdMap {
    fn new(offset: usize) -> Self {
        Self {
            raw: Vec::new(),
            offset,
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, raw: u64) -> usize {
        if let Some(&id) = self.index.get(&raw) {
            return id;
        }
        let id = self.raw.len() + self.offset;
        self.raw.push(raw);
        self.index.insert(raw, id);
        id
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .raw
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, i + self.offset))
            .collect();
    }

    pub fn encode(&self, raw: u64) -> Option<usize> {
        self.index.get(&raw).copied()
    }

    pub fn decode(&self, id: usize) -> Option<u64> {
        id.checked_sub(self.offset).and_then(|i| self.raw.get(i)).copied()
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Input order, used as the chronological ordinal.
    pub order: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

impl InteractionLog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }
}

/// Reads whitespace-separated `user item` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(std::io::BufReader::new(file))
}

pub fn parse_interactions(reader: impl BufRead) -> Result<InteractionLog> {
    let mut log = InteractionLog {
        records: Vec::new(),
        users: IdMap::new(0),
        items: IdMap::new(1),
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse = |f: Option<&str>, what: &str| -> Result<u64> {
            let f = f.ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("missing {what} field"),
            })?;
            f.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("invalid {what} id {f:?}"),
            })
        };
        let user = parse(fields.next(), "user")?;
        let item = parse(fields.next(), "item")?;
        if let Some(extra) = fields.next() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("unexpected trailing field {extra:?}"),
            });
        }
        let order = log.records.len();
        log.records.push(Interaction {
            user: log.users.intern(user),
            item: log.items.intern(item),
            order,
        });
    }
    if log.records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: usize,
    pub items: Vec<usize>,
    /// Every item the user ever touched, sorted and deduplicated, including
    /// actions cut off by `max_len`.
    pub history: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequences {
    pub sequences: Vec<UserSequence>,
    pub dropped_users: usize,
}

pub fn build_sequences(log: &InteractionLog, max_len: usize) -> Result<Sequences> {
    if max_len < MIN_SEQUENCE_LEN {
        return Err(Error::InvalidArgument(format!(
            "max_len must be at least {MIN_SEQUENCE_LEN}, got {max_len}"
        )));
    }
    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); log.n_users()];
    for rec in &log.records {
        per_user[rec.user].push(*rec);
    }
    let mut sequences = Vec::new();
    let mut dropped_users = 0;
    for (user, mut recs) in per_user.into_iter().enumerate() {
        if recs.len() < MIN_SEQUENCE_LEN {
            dropped_users += 1;
            continue;
        }
        recs.sort_by_key(|r| r.order);
        let all: Vec<usize> = recs.iter().map(|r| r.item).collect();
        let mut history = all.clone();
        history.sort_unstable();
        history.dedup();
        let start = all.len().saturating_sub(max_len);
        sequences.push(UserSequence {
            user,
            items: all[start..].to_vec(),
            history,
        });
    }
    if sequences.is_empty() {
        return Err(Error::NoSequences {
            min_len: MIN_SEQUENCE_LEN,
        });
    }
    Ok(Sequences {
        sequences,
        dropped_users,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: usize,
    pub train: Vec<usize>,
    pub valid_target: usize,
    pub test_target: usize,
    pub history: Vec<usize>,
}

impl UserSplit {
    pub fn valid_prefix(&self) -> &[usize] {
        &self.train
    }

    pub fn test_prefix(&self) -> Vec<usize> {
        let mut p = self.train.clone();
        p.push(self.valid_target);
        p
    }

    pub fn in_history(&self, item: usize) -> bool {
        self.history.binary_search(&item).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitPart {
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub users: Vec<UserSplit>,
}

impl SplitDataset {
    /// `(prefix, target)` for one evaluation part.
    pub fn eval_case(&self, idx: usize, part: SplitPart) -> (Vec<usize>, usize) {
        let u = &self.users[idx];
        match part {
            SplitPart::Valid => (u.valid_prefix().to_vec(), u.valid_target),
            SplitPart::Test => (u.test_prefix(), u.test_target),
        }
    }
}

pub fn split_leave_one_out(seqs: &[UserSequence], n_users: usize, n_items: usize) -> Result<SplitDataset> {
    let mut users = Vec::with_capacity(seqs.len());
    for s in seqs {
        let n = s.items.len();
        if n < MIN_SEQUENCE_LEN {
            return Err(Error::InvalidArgument(format!(
                "user {} has {n} items, leave-one-out needs {MIN_SEQUENCE_LEN}",
                s.user
            )));
        }
        users.push(UserSplit {
            user: s.user,
            train: s.items[..n - 2].to_vec(),
            valid_target: s.items[n - 2],
            test_target: s.items[n - 1],
            history: s.history.clone(),
        });
    }
    Ok(SplitDataset {
        n_users,
        n_items,
        users,
    })
}

#[inline]
fn pair_key(i: usize, j: usize) -> u64 {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    ((a as u64) << 32) | b as u64
}

/// Global occurrence and pairwise co-occurrence counts over training
/// sequences. A pair is counted once per user that has both items.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "CoocRepr", into = "CoocRepr")]
pub struct CoocStats {
    item_count: Vec<u32>,
    pairs: HashMap<u64, u32>,
}

#[derive(Serialize, Deserialize)]
struct CoocRepr {
    item_count: Vec<u32>,
    pairs: Vec<(u32, u32, u32)>,
}

impl From<CoocStats> for CoocRepr {
    fn from(c: CoocStats) -> Self {
        let mut pairs: Vec<(u32, u32, u32)> = c
            .pairs
            .iter()
            .map(|(&k, &v)| ((k >> 32) as u32, k as u32, v))
            .collect();
        pairs.sort_unstable();
        CoocRepr {
            item_count: c.item_count,
            pairs,
        }
    }
}

impl From<CoocRepr> for CoocStats {
    fn from(r: CoocRepr) -> Self {
        CoocStats {
            item_count: r.item_count,
            pairs: r
                .pairs
                .into_iter()
                .map(|(i, j, v)| (pair_key(i as usize, j as usize), v))
                .collect(),
        }
    }
}

impl CoocStats {
    pub fn empty(n_items: usize) -> Self {
        Self {
            item_count: vec![0; n_items + 1],
            pairs: HashMap::new(),
        }
    }

    pub fn from_sequences<'a>(n_items: usize, seqs: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut stats = Self::empty(n_items);
        for seq in seqs {
            stats.add_sequence(seq);
        }
        stats
    }

    pub fn add_sequence(&mut self, seq: &[usize]) {
        for &i in seq {
            if i != PAD {
                self.item_count[i] += 1;
            }
        }
        let mut distinct: Vec<usize> = seq.iter().copied().filter(|&i| i != PAD).collect();
        distinct.sort_unstable();
        distinct.dedup();
        for (a, &i) in distinct.iter().enumerate() {
            for &j in &distinct[a + 1..] {
                *self.pairs.entry(pair_key(i, j)).or_insert(0) += 1;
            }
        }
    }

    /// Adds another set of counts; addition commutes so merge order is irrelevant.
    pub fn merge(&mut self, other: &CoocStats) {
        for (a, b) in self.item_count.iter_mut().zip(&other.item_count) {
            *a += b;
        }
        for (&k, &v) in &other.pairs {
            *self.pairs.entry(k).or_insert(0) += v;
        }
    }

    pub fn n_items(&self) -> usize {
        self.item_count.len().saturating_sub(1)
    }

    /// `P_i`, zero for padding and unseen items.
    pub fn item_count(&self, i: usize) -> u32 {
        self.item_count.get(i).copied().unwrap_or(0)
    }

    /// `P_ij` for distinct items. For `i == j` this returns `P_i`
    /// (an item co-occurs with itself wherever it occurs).
    pub fn pair_count(&self, i: usize, j: usize) -> u32 {
        if i == PAD || j == PAD {
            return 0;
        }
        if i == j {
            return self.item_count(i);
        }
        self.pairs.get(&pair_key(i, j)).copied().unwrap_or(0)
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Dense `C` restricted to a sequence window (diagonal holds `P_i`).
    pub fn window(&self, items: &[usize]) -> Vec<Vec<f64>> {
        items
            .iter()
            .map(|&i| items.iter().map(|&j| self.pair_count(i, j) as f64).collect())
            .collect()
    }
}

pub fn build_cooc(split: &SplitDataset) -> Result<CoocStats> {
    if split.users.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    Ok(CoocStats::from_sequences(
        split.n_items,
        split.users.iter().map(|u| u.train.as_slice()),
    ))
}

/// `k` distinct items drawn uniformly from `1..=n_items` minus `history`
/// (which must be sorted).
pub fn sample_negatives(history: &[usize], n_items: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    debug_assert!(history.windows(2).all(|w| w[0] < w[1]), "history must be sorted");
    let excluded = history.iter().filter(|&&i| (1..=n_items).contains(&i)).count();
    let available = n_items - excluded;
    if available < k {
        return Err(Error::CatalogTooSmall {
            needed: k,
            available,
        });
    }
    // Rejection sampling while the complement is large, enumeration otherwise.
    if available >= 2 * k && available * 2 >= n_items {
        let mut picked = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let c = rng.gen_range(1..=n_items);
            if history.binary_search(&c).is_err() && picked.insert(c) {
                out.push(c);
            }
        }
        return Ok(out);
    }
    let mut pool: Vec<usize> = (1..=n_items).filter(|i| history.binary_search(i).is_err()).collect();
    let (chosen, _) = pool.partial_shuffle(rng, k);
    Ok(chosen.to_vec())
}

/// Left-padded training batch. Row `b` holds one user's training inputs;
/// `targets[b][t]` is the item that follows `item_ids[b][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub item_ids: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<Vec<usize>>>,
    pub user_ids: Vec<usize>,
    pub pad_mask: Vec<Vec<bool>>,
}

/// One unpadded training row borrowed from a [`Batch`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRow<'a> {
    pub user: usize,
    pub items: &'a [usize],
    pub targets: &'a [usize],
    pub negatives: &'a [Vec<usize>],
    /// Position of `items[0]` in the padded layout.
    pub offset: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    pub fn valid_positions(&self) -> usize {
        self.pad_mask.iter().flatten().filter(|&&m| m).count()
    }

    pub fn row(&self, b: usize) -> TrainRow<'_> {
        let offset = self.pad_mask[b].iter().position(|&m| m).unwrap_or(self.pad_mask[b].len());
        TrainRow {
            user: self.user_ids[b],
            items: &self.item_ids[b][offset..],
            targets: &self.targets[b][offset..],
            negatives: &self.negatives[b][offset..],
            offset,
        }
    }
}

/// Pads a training sequence's `(input, target)` pair to `max_len`.
pub fn pad_training_row(train: &[usize], max_len: usize) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
    let n = train.len().saturating_sub(1).min(max_len);
    let inputs = &train[train.len() - 1 - n..train.len() - 1];
    let targets = &train[train.len() - n..];
    let mut ids = vec![PAD; max_len];
    let mut tgt = vec![PAD; max_len];
    let mut mask = vec![false; max_len];
    ids[max_len - n..].copy_from_slice(inputs);
    tgt[max_len - n..].copy_from_slice(targets);
    mask[max_len - n..].iter_mut().for_each(|m| *m = true);
    (ids, tgt, mask)
}

/// Shuffles the users with a training prefix of at least two items and
/// cuts them into batches. Deterministic for a given rng state.
pub fn make_batches(
    split: &SplitDataset,
    batch_size: usize,
    max_len: usize,
    k_neg: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..split.users.len())
        .filter(|&u| split.users[u].train.len() >= 2)
        .collect();
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut batch = Batch {
            item_ids: Vec::with_capacity(chunk.len()),
            targets: Vec::with_capacity(chunk.len()),
            negatives: Vec::with_capacity(chunk.len()),
            user_ids: Vec::with_capacity(chunk.len()),
            pad_mask: Vec::with_capacity(chunk.len()),
        };
        for &u in chunk {
            let us = &split.users[u];
            let (ids, tgt, mask) = pad_training_row(&us.train, max_len);
            let mut negs = vec![Vec::new(); max_len];
            for (t, slot) in negs.iter_mut().enumerate() {
                if mask[t] {
                    *slot = sample_negatives(&us.history, split.n_items, k_neg, rng)?;
                }
            }
            batch.item_ids.push(ids);
            batch.targets.push(tgt);
            batch.negatives.push(negs);
            batch.user_ids.push(us.user);
            batch.pad_mask.push(mask);
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// A prepared corpus: split, counts and the id maps, as written by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub format_version: u32,
    pub max_len: usize,
    pub dropped_users: usize,
    pub user_ids: IdMap,
    pub item_ids: IdMap,
    pub split: SplitDataset,
    pub cooc: CoocStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub actions: usize,
    pub avg_actions_per_user: f64,
    pub avg_actions_per_item: f64,
}

impl PreparedDataset {
    pub fn from_log(log: InteractionLog, max_len: usize) -> Result<Self> {
        let seqs = build_sequences(&log, max_len)?;
        let split = split_leave_one_out(&seqs.sequences, log.n_users(), log.n_items())?;
        let cooc = build_cooc(&split)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            max_len,
            dropped_users: seqs.dropped_users,
            user_ids: log.users,
            item_ids: log.items,
            split,
            cooc,
        })
    }

    /// Statistics over the retained (capped) sequences.
    pub fn stats(&self) -> DatasetStats {
        let users = self.split.users.len();
        let actions: usize = self.split.users.iter().map(|u| u.train.len() + 2).sum();
        let mut seen = HashSet::new();
        for u in &self.split.users {
            seen.extend(u.train.iter().copied());
            seen.insert(u.valid_target);
            seen.insert(u.test_target);
        }
        let items = seen.len();
        DatasetStats {
            users,
            items,
            actions,
            avg_actions_per_user: actions as f64 / users.max(1) as f64,
            avg_actions_per_item: actions as f64 / items.max(1) as f64,
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ds: PreparedDataset = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ds.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: ds.format_version,
                expected: FORMAT_VERSION,
            });
        }
        ds.user_ids.rebuild_index();
        ds.item_ids.rebuild_index();
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn log_from(text: &str) -> InteractionLog {
        parse_interactions(text.as_bytes()).unwrap()
    }

    #[test]
    fn loads_and_reindexes() {
        let log = log_from("7 42\n7 43\n9 42\n");
        assert_eq!(log.n_users(), 2);
        assert_eq!(log.n_items(), 2);
        assert_eq!(log.records.len(), 3);
        assert_eq!(log.items.encode(42), Some(1));
        assert_eq!(log.items.decode(2), Some(43));
        assert_eq!(log.users.encode(9), Some(1));
        assert_eq!(log.items.decode(PAD), None);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_interactions("7\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_interactions("1 2\n3 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse_interactions("".as_bytes()), Err(Error::EmptyInput)));
    }

    #[test]
    fn sequences_keep_tail_and_drop_short_users() {
        let mut text = String::new();
        for i in 0..60 {
            text.push_str(&format!("1 {i}\n"));
        }
        text.push_str("2 0\n2 1\n3 5\n3 6\n3 7\n");
        let log = log_from(&text);
        let seqs = build_sequences(&log, 50).unwrap();
        assert_eq!(seqs.dropped_users, 1);
        assert_eq!(seqs.sequences.len(), 2);
        let long = &seqs.sequences[0];
        assert_eq!(long.items.len(), 50);
        assert_eq!(long.items[0], log.items.encode(10).unwrap());
        assert_eq!(*long.items.last().unwrap(), log.items.encode(59).unwrap());
        assert_eq!(long.history.len(), 60);
        assert_eq!(seqs.sequences[1].items.len(), 3);
        assert!(build_sequences(&log, 2).is_err());
        assert!(matches!(
            build_sequences(&log_from("1 1\n1 2\n"), 50),
            Err(Error::NoSequences { .. })
        ));
    }

    #[test]
    fn leave_one_out_examples() {
        let seq = |items: Vec<usize>| UserSequence {
            user: 0,
            history: items.clone(),
            items,
        };
        let s = split_leave_one_out(&[seq(vec![1, 2, 3, 4])], 1, 4).unwrap();
        let u = &s.users[0];
        assert_eq!(u.train, vec![1, 2]);
        assert_eq!(s.eval_case(0, SplitPart::Valid), (vec![1, 2], 3));
        assert_eq!(s.eval_case(0, SplitPart::Test), (vec![1, 2, 3], 4));
        let s = split_leave_one_out(&[seq(vec![1, 2, 3])], 1, 3).unwrap();
        assert_eq!(s.users[0].train, vec![1]);
        assert_eq!((s.users[0].valid_target, s.users[0].test_target), (2, 3));
        let many: Vec<_> = (0..100).map(|_| seq(vec![1, 2, 3, 4, 5])).collect();
        let s = split_leave_one_out(&many, 100, 5).unwrap();
        assert_eq!(s.users.len(), 100);
    }

    #[test]
    fn cooc_counts_once_per_user() {
        let c = CoocStats::from_sequences(10, [&[5usize, 9, 1][..], &[9, 5][..]]);
        assert_eq!(c.pair_count(5, 9), 2);
        assert_eq!(c.pair_count(9, 5), 2);
        let c = CoocStats::from_sequences(10, [&[3usize, 4, 3][..]]);
        assert_eq!(c.pair_count(3, 4), 1);
        assert_eq!(c.item_count(3), 2);
        assert_eq!(c.pair_count(3, 3), 2);
        assert_eq!(c.pair_count(1, 7), 0);
        assert_eq!(c.pair_count(PAD, 3), 0);
    }

    #[test]
    fn cooc_serde_round_trip() {
        let c = CoocStats::from_sequences(6, [&[1usize, 2, 3][..], &[2, 6][..]]);
        let json = serde_json::to_string(&c).unwrap();
        let back: CoocStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn negatives_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let history: Vec<usize> = (1..=10).filter(|&i| i != 7).collect();
        assert_eq!(sample_negatives(&history, 10, 1, &mut rng).unwrap(), vec![7]);
        let history: Vec<usize> = (1..=40).collect();
        let negs = sample_negatives(&history, 930, 100, &mut rng).unwrap();
        let set: HashSet<_> = negs.iter().collect();
        assert_eq!(set.len(), 100);
        assert!(negs.iter().all(|&i| i > 40 && i <= 930));
        assert!(matches!(
            sample_negatives(&history, 45, 10, &mut rng),
            Err(Error::CatalogTooSmall { needed: 10, available: 5 })
        ));
    }

    fn toy_split(n_users: usize, len: usize, n_items: usize) -> SplitDataset {
        let seqs: Vec<UserSequence> = (0..n_users)
            .map(|u| {
                let items: Vec<usize> = (0..len).map(|t| 1 + (u * 7 + t * 3) % n_items).collect();
                let mut history = items.clone();
                history.sort_unstable();
                history.dedup();
                UserSequence { user: u, items, history }
            })
            .collect();
        split_leave_one_out(&seqs, n_users, n_items).unwrap()
    }

    #[test]
    fn batches_sizes_padding_and_determinism() {
        let split = toy_split(130, 6, 200);
        let batches = make_batches(&split, 128, 10, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![128, 2]);
        let again = make_batches(&split, 128, 10, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(batches, again);

        let (ids, tgt, mask) = pad_training_row(&[11, 12, 13, 14], 5);
        assert_eq!(ids, vec![0, 0, 11, 12, 13]);
        assert_eq!(tgt, vec![0, 0, 12, 13, 14]);
        assert_eq!(mask, vec![false, false, true, true, true]);

        let b = &batches[0];
        for r in 0..b.len() {
            let row = b.row(r);
            assert_eq!(row.items.len(), row.targets.len());
            let u = split.users.iter().find(|u| u.user == row.user).unwrap();
            assert_eq!(row.items, &u.train[..u.train.len() - 1]);
            for negs in row.negatives {
                assert!(negs.iter().all(|&n| !u.in_history(n)));
            }
        }
    }

    /// Brute-force oracle: enumerate all unordered pairs per user as sets.
    fn oracle_pairs(seqs: &[Vec<usize>]) -> HashMap<(usize, usize), u32> {
        let mut out = HashMap::new();
        for s in seqs {
            let set: std::collections::BTreeSet<usize> = s.iter().copied().collect();
            let v: Vec<usize> = set.into_iter().collect();
            for a in 0..v.len() {
                for b in 0..v.len() {
                    if a != b {
                        *out.entry((v[a], v[b])).or_insert(0) += 1;
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn pair_counts_match_oracle_and_are_symmetric(
            seqs in prop::collection::vec(prop::collection::vec(1usize..12, 0..9), 1..10)
        ) {
            let stats = CoocStats::from_sequences(12, seqs.iter().map(Vec::as_slice));
            let oracle = oracle_pairs(&seqs);
            for i in 1..=12 {
                for j in 1..=12 {
                    prop_assert_eq!(stats.pair_count(i, j), stats.pair_count(j, i));
                    if i != j {
                        prop_assert_eq!(stats.pair_count(i, j), *oracle.get(&(i, j)).unwrap_or(&0));
                        prop_assert!(stats.pair_count(i, j) <= stats.item_count(i).min(stats.item_count(j)));
                    }
                }
            }
        }

        #[test]
        fn merge_is_order_independent(
            a in prop::collection::vec(prop::collection::vec(1usize..8, 0..6), 1..5),
            b in prop::collection::vec(prop::collection::vec(1usize..8, 0..6), 1..5),
        ) {
            let sa = CoocStats::from_sequences(8, a.iter().map(Vec::as_slice));
            let sb = CoocStats::from_sequences(8, b.iter().map(Vec::as_slice));
            let mut ab = sa.clone();
            ab.merge(&sb);
            let mut ba = sb.clone();
            ba.merge(&sa);
            prop_assert_eq!(&ab, &ba);
            let all = CoocStats::from_sequences(8, a.iter().chain(&b).map(Vec::as_slice));
            prop_assert_eq!(ab, all);
        }

        #[test]
        fn reindexing_is_bijective(raw in prop::collection::vec((0u64..50, 0u64..1000), 1..60)) {
            let text: String = raw.iter().map(|(u, i)| format!("{u} {i}\n")).collect();
            let log = parse_interactions(text.as_bytes()).unwrap();
            for (u, i) in &raw {
                prop_assert_eq!(log.users.decode(log.users.encode(*u).unwrap()), Some(*u));
                prop_assert_eq!(log.items.decode(log.items.encode(*i).unwrap()), Some(*i));
                prop_assert!(log.items.encode(*i).unwrap() >= 1);
            }
        }

        #[test]
        fn split_never_leaks_targets(len in 3usize..20, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let items: Vec<usize> = (0..len).map(|_| rng.gen_range(1..30)).collect();
            let mut history = items.clone();
            history.sort_unstable();
            history.dedup();
            let s = split_leave_one_out(&[UserSequence { user: 0, items: items.clone(), history }], 1, 30).unwrap();
            let u = &s.users[0];
            let mut rebuilt = u.train.clone();
            rebuilt.push(u.valid_target);
            rebuilt.push(u.test_target);
            prop_assert_eq!(rebuilt, items);
            prop_assert_eq!(u.train.len(), len - 2);
        }
    }
}
