//! The autoencoder: architecture, forward and backward passes, masked loss,
//! dense re-feeding and checkpoints.

mod checkpoint;
mod grid;
mod loss;
mod model;
mod network;
mod step;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint};
pub use grid::{grid_values, is_on_grid, round_to_grid, GRID_MAX, GRID_MIN, GRID_STEP};
pub use loss::{masked_mse, LossReport};
pub use model::{build_model, init_bound, FlexModel, Gradients, LayerParams};
pub use network::{backward, forward, ForwardTrace, Mode, RowBatch};
pub use step::{dense_refeed, refeed_target, train_step};
