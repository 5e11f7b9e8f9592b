//! Rating ingestion, train/test splitting, pivoting into rows and batching.

mod ratings;
mod rows;

pub use ratings::{
    IdMap, InputFormat, Rating, RatingTable, CANONICAL_ITEMS, CANONICAL_RATINGS, CANONICAL_USERS,
};
pub use rows::{compute_means, dense_batch, make_batches, MeanTable, RowMatrix};
