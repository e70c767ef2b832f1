//! Item, positional and user embedding tables.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::ModelError;
use crate::params::{normal_matrix, ParamId, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTables {
    /// `[n_items + 1, d]`, row 0 is the padding item and stays zero.
    pub item: ParamId,
    /// `[max_len, d]`
    pub positional: ParamId,
    /// `[n_users, d]`
    pub user: ParamId,
}

impl EmbeddingTables {
    pub fn register(
        store: &mut ParamStore,
        n_items: usize,
        n_users: usize,
        max_len: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let mut item = normal_matrix(n_items + 1, dim, std, rng);
        item.row_mut(0).fill(0.0);
        Self {
            item: store.add("embed.item", item),
            positional: store.add("embed.positional", normal_matrix(max_len, dim, std, rng)),
            user: store.add("embed.user", normal_matrix(n_users, dim, std, rng)),
        }
    }

    /// `X[t] = item[items[t]] + positional[offset + t]` for an unpadded sequence
    /// whose first element sits at `offset` in the padded layout.
    pub fn inputs(&self, tape: &mut Tape, items: &[usize], offset: usize) -> Result<Var, ModelError> {
        let params = tape.params();
        let n_rows = params.get(self.item).rows();
        let max_len = params.get(self.positional).rows();
        if let Some(&bad) = items.iter().find(|&&i| i >= n_rows) {
            return Err(ModelError::IdOutOfRange {
                what: "item",
                id: bad,
                size: n_rows,
            });
        }
        if offset + items.len() > max_len {
            return Err(ModelError::SequenceTooLong {
                len: offset + items.len(),
                max_len,
            });
        }
        let positions: Vec<usize> = (offset..offset + items.len()).collect();
        let e = tape.gather(self.item, items);
        let p = tape.gather(self.positional, &positions);
        Ok(tape.add(e, p))
    }

    pub fn user_row(&self, tape: &mut Tape, user: usize) -> Result<Var, ModelError> {
        let size = tape.params().get(self.user).rows();
        if user >= size {
            return Err(ModelError::IdOutOfRange { what: "user", id: user, size });
        }
        Ok(tape.gather(self.user, &[user]))
    }

    /// Zeroes the padding row (after an optimizer step).
    pub fn clear_padding(&self, store: &mut ParamStore) {
        store.get_mut(self.item).row_mut(0).fill(0.0);
    }
}

/// Attention input for a full padded row: `X[t] = item[ids[t]] + positional[t]`.
pub fn build_inputs(seq_row: &[usize], store: &ParamStore, tables: &EmbeddingTables) -> Result<Matrix, ModelError> {
    let item = store.get(tables.item);
    let pos = store.get(tables.positional);
    if seq_row.len() > pos.rows() {
        return Err(ModelError::SequenceTooLong {
            len: seq_row.len(),
            max_len: pos.rows(),
        });
    }
    let mut x = Matrix::zeros(seq_row.len(), item.cols());
    for (t, &id) in seq_row.iter().enumerate() {
        if id >= item.rows() {
            return Err(ModelError::IdOutOfRange {
                what: "item",
                id,
                size: item.rows(),
            });
        }
        for (o, (a, b)) in x.row_mut(t).iter_mut().zip(item.row(id).iter().zip(pos.row(t))) {
            *o = a + b;
        }
    }
    Ok(x)
}

pub fn lookup_user<'a>(user: usize, store: &'a ParamStore, tables: &EmbeddingTables) -> Result<&'a [f64], ModelError> {
    let table = store.get(tables.user);
    if user >= table.rows() {
        return Err(ModelError::IdOutOfRange {
            what: "user",
            id: user,
            size: table.rows(),
        });
    }
    Ok(table.row(user))
}
