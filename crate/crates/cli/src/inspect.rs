//! CSV exports for the qualitative figures: correlation matrices, kernel
//! mixture weights, final-row attention, item embeddings and per-frequency ranks.

use std::path::{Path, PathBuf};

use rksa::attention::{AttentionTrace, ForwardOptions};
use rksa::corpus::{PreparedDataset, SplitPart};
use rksa::eval::{evaluate, EvalConfig, EvalMetrics};
use rksa::kernel::mixture;
use rksa::model::{window, Rksa};
use rksa::rng::stream;
use rksa::Error;

use crate::Failure;

pub struct Sequence {
    pub user: usize,
    pub items: Vec<usize>,
}

/// A user's full test prefix, or an explicit raw-id sequence attributed to `user`.
pub fn resolve_sequence(data: &PreparedDataset, user: Option<u64>, items: Option<&[u64]>) -> Result<Sequence, Failure> {
    let user_id = match user {
        Some(raw) => data.user_ids.encode(raw).ok_or(Error::UnknownUser(raw))?,
        None => data.split.users.first().map(|u| u.user).ok_or(Error::EmptyInput)?,
    };
    let items = match items {
        Some(raw) => raw
            .iter()
            .map(|&r| data.item_ids.encode(r).ok_or(Error::UnknownItem(r)))
            .collect::<Result<Vec<_>, _>>()?,
        None => {
            let split = data
                .split
                .users
                .iter()
                .find(|u| u.user == user_id)
                .ok_or_else(|| Failure::Data(format!("user {user_id} has no split")))?;
            split.test_prefix()
        }
    };
    if items.is_empty() {
        return Err(Failure::Usage("sequence is empty".into()));
    }
    Ok(Sequence { user: user_id, items })
}

fn writer(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<csv::Writer<std::fs::File>, Failure> {
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(w)
}

fn csv_err(e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("csv: {e}"))
}

pub fn run(model: &Rksa, data: &PreparedDataset, seq: &Sequence, eval: EvalConfig, out_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::Data(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let opts = ForwardOptions {
        trace: true,
        ..ForwardOptions::new(eval.mode)
    };
    let mut rng = stream(&[0, seq.user as u64]);
    let (_, trace) = model.final_state(seq.user, &seq.items, &data.cooc, &opts, &mut rng)?;
    let trace = trace.expect("trace requested");
    let (items, _) = window(&seq.items, model.config().max_len);
    let labels: Vec<String> = items
        .iter()
        .map(|&i| data.item_ids.decode(i).map_or_else(|| format!("#{i}"), |r| r.to_string()))
        .collect();

    write_correlations(&trace, &labels, out_dir, &mut written)?;
    write_attention(&trace, items, &labels, data, out_dir, &mut written)?;
    write_kernel_weights(model, data, out_dir, &mut written)?;
    write_embeddings(model, data, out_dir, &mut written)?;
    let metrics = evaluate(model, &data.split, &data.cooc, SplitPart::Test, &eval)?;
    write_frequency_ranks(&metrics, out_dir, &mut written)?;
    Ok(written)
}

fn write_correlations(trace: &AttentionTrace, labels: &[String], dir: &Path, written: &mut Vec<PathBuf>) -> Result<(), Failure> {
    for (b, heads) in trace.heads.iter().enumerate() {
        for (h, head) in heads.iter().enumerate() {
            let mut w = writer(dir, &format!("correlation_block{b}_head{h}.csv"), written)?;
            let mut header = vec!["item".to_string()];
            header.extend(labels.iter().cloned());
            w.write_record(&header).map_err(csv_err)?;
            for (i, label) in labels.iter().enumerate() {
                let mut row = vec![label.clone()];
                row.extend(head.psi.row(i).iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(csv_err)?;
        }
    }
    Ok(())
}

/// Final-row attention per block and head, then a row flagging keys that
/// co-occur with the last item in training.
fn write_attention(
    trace: &AttentionTrace,
    items: &[usize],
    labels: &[String],
    data: &PreparedDataset,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<(), Failure> {
    let mut w = writer(dir, "attention.csv", written)?;
    let mut header = vec!["row".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let last = items.len() - 1;
    for (b, heads) in trace.heads.iter().enumerate() {
        for (h, head) in heads.iter().enumerate() {
            let mut row = vec![format!("block{b}_head{h}")];
            row.extend(head.weights.row(last).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let mut row = vec!["cooccurs_with_last".to_string()];
    row.extend(items.iter().enumerate().map(|(j, &i)| {
        let hit = j != last && data.cooc.pair_count(i, items[last]) > 0;
        u8::from(hit).to_string()
    }));
    w.write_record(&row).map_err(csv_err)?;
    w.flush().map_err(csv_err)
}

/// Mean mixture weights over every user, per block and head.
fn write_kernel_weights(model: &Rksa, data: &PreparedDataset, dir: &Path, written: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut w = writer(dir, "kernel_weights.csv", written)?;
    w.write_record(["block", "head", "counting", "item", "user"]).map_err(csv_err)?;
    let params = model.params();
    let users = params.get(model.embed().user);
    let active = model.config().kernel.active;
    for (b, block) in model.blocks().iter().enumerate() {
        for (h, head) in block.heads.iter().enumerate() {
            let w_u = params.get(head.kernel.mix_w);
            let b_u = params.get(head.kernel.mix_b).row(0);
            let mut mean = [0.0; 3];
            for u in 0..data.split.n_users {
                let r = mixture(users.row(u), w_u, b_u, active);
                for k in 0..3 {
                    mean[k] += r[k] / data.split.n_users as f64;
                }
            }
            let mut row = vec![b.to_string(), h.to_string()];
            row.extend(mean.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

fn write_embeddings(model: &Rksa, data: &PreparedDataset, dir: &Path, written: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut w = writer(dir, "item_embeddings.csv", written)?;
    let table = model.params().get(model.embed().item);
    let mut header = vec!["item".to_string()];
    header.extend((0..table.cols()).map(|c| format!("e{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 1..table.rows() {
        let mut row = vec![data.item_ids.decode(i).map_or_else(|| i.to_string(), |r| r.to_string())];
        row.extend(table.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

fn write_frequency_ranks(metrics: &EvalMetrics, dir: &Path, written: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let mut w = writer(dir, "frequency_ranks.csv", written)?;
    w.write_record(["occurrence_decile", "mean_rank"]).map_err(csv_err)?;
    for (decile, rank) in &metrics.frequency_buckets {
        w.write_record([decile.to_string(), rank.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}
