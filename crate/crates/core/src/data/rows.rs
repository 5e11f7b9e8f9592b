use crate::autoenc::RowBatch;
use crate::config::Pivot;
use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, RngStream};
use crate::scalar::Scalar;

use super::ratings::RatingTable;

/// Ratings grouped by row in a compressed sparse-row layout.
///
/// Column indices ascend strictly within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMatrix {
    pivot: Pivot,
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f32>,
}

impl RowMatrix {
    /// Groups a table's ratings by the pivot axis.
    ///
    /// Dimensions come from the table's id maps, so rows or columns with no
    /// ratings still exist.
    pub fn pivot(table: &RatingTable, pivot: Pivot) -> Self {
        let (n_rows, n_cols) = match pivot {
            Pivot::User => (table.users().len(), table.items().len()),
            Pivot::Item => (table.items().len(), table.users().len()),
        };
        let key = |r: &super::Rating| match pivot {
            Pivot::User => (r.user, r.item),
            Pivot::Item => (r.item, r.user),
        };
        let mut triples: Vec<(u32, u32, f32)> = table
            .ratings()
            .iter()
            .map(|r| {
                let (row, col) = key(r);
                (row, col, r.value)
            })
            .collect();
        triples.sort_unstable_by_key(|&(row, col, _)| (row, col));
        Self::from_sorted(pivot, n_rows, n_cols, &triples)
    }

    fn from_sorted(pivot: Pivot, n_rows: usize, n_cols: usize, triples: &[(u32, u32, f32)]) -> Self {
        let mut offsets = vec![0usize; n_rows + 1];
        for &(row, _, _) in triples {
            offsets[row as usize + 1] += 1;
        }
        for i in 0..n_rows {
            offsets[i + 1] += offsets[i];
        }
        RowMatrix {
            pivot,
            n_rows,
            n_cols,
            offsets,
            cols: triples.iter().map(|t| t.1).collect(),
            values: triples.iter().map(|t| t.2).collect(),
        }
    }

    /// Builds a matrix from per-row `(col, value)` lists.
    pub fn from_rows(pivot: Pivot, n_cols: usize, rows: &[Vec<(u32, f32)>]) -> Result<Self> {
        let mut triples = Vec::new();
        for (r, entries) in rows.iter().enumerate() {
            let mut sorted = entries.clone();
            sorted.sort_unstable_by_key(|e| e.0);
            if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::shape("RowMatrix::from_rows", format!("row {r}"), "duplicate column"));
            }
            if let Some(&(c, _)) = sorted.last() {
                if c as usize >= n_cols {
                    return Err(Error::shape("RowMatrix::from_rows", format!("{n_cols} columns"), format!("column {c}")));
                }
            }
            triples.extend(sorted.into_iter().map(|(c, v)| (r as u32, c, v)));
        }
        Ok(Self::from_sorted(pivot, rows.len(), n_cols, &triples))
    }

    pub fn pivot_kind(&self) -> Pivot {
        self.pivot
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// `(row, col, value)` for every stored entry.
    pub fn triples(&self) -> impl Iterator<Item = (usize, u32, f32)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }
}

/// Per-row mean ratings over the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanTable {
    pub row_means: Vec<f64>,
    /// Mean of all training ratings; stands in for rows with none.
    pub global: f64,
}

impl MeanTable {
    pub fn mean(&self, row: usize) -> f64 {
        self.row_means[row]
    }
}

pub fn compute_means(train: &RowMatrix) -> Result<MeanTable> {
    if train.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    let global = train.values.iter().map(|&v| v as f64).sum::<f64>() / train.nnz() as f64;
    let row_means = (0..train.n_rows())
        .map(|i| {
            let (_, vals) = train.row(i);
            if vals.is_empty() {
                global
            } else {
                vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    Ok(MeanTable { row_means, global })
}

/// Densifies sparse rows into a batch.
///
/// With `means` given (mean normalization), observed values become `r − μ`
/// and the mask is all ones; otherwise the mask marks observed entries.
pub fn dense_batch<T: Scalar>(
    row_ids: &[usize],
    entries: &[(&[u32], &[f32])],
    n_cols: usize,
    means: Option<&MeanTable>,
) -> RowBatch<T> {
    let b = row_ids.len();
    let mut x = DenseMatrix::zeros(b, n_cols);
    let mut mask = if means.is_some() {
        DenseMatrix::filled(b, n_cols, T::one())
    } else {
        DenseMatrix::zeros(b, n_cols)
    };
    for (r, (&row, &(cols, vals))) in row_ids.iter().zip(entries).enumerate() {
        let mu = means.map_or(0.0, |m| m.mean(row));
        let xr = x.row_mut(r);
        for (&c, &v) in cols.iter().zip(vals) {
            xr[c as usize] = T::lit(v as f64 - mu);
        }
        if means.is_none() {
            let mr = mask.row_mut(r);
            for &c in cols {
                mr[c as usize] = T::one();
            }
        }
    }
    RowBatch {
        y: x.clone(),
        x,
        mask,
        rows: row_ids.to_vec(),
        row_means: means.map(|m| row_ids.iter().map(|&r| T::lit(m.mean(r))).collect()),
    }
}

/// Shuffles rows with `seed` and cuts them into batches of `batch_size`
/// (the last may be smaller). `x = y` in every batch.
pub fn make_batches<T: Scalar>(
    train: &RowMatrix,
    means: &MeanTable,
    batch_size: usize,
    mean_normalization: bool,
    seed: u64,
) -> Vec<RowBatch<T>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    RngStream::new(seed).shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|ids| {
            let entries: Vec<(&[u32], &[f32])> = ids.iter().map(|&i| train.row(i)).collect();
            dense_batch(ids, &entries, train.n_cols(), mean_normalization.then_some(means))
        })
        .collect()
}
