//! A small spatial-temporal transformer scorer with hand-written gradients.

mod data;
mod model;
pub mod ops;

pub use data::{
    batch_gradient, checkpoint_json, load_checkpoint, loss_curve_csv, mean_loss, numeric_gradient,
    prepare_input, relative_error, resample_labels, save_checkpoint, score_sequence, train,
    Example, TrainConfig, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use model::{
    loss, Layout, Prediction, Target, Tensor, Trace, TransformerConfig, TransformerModel, SCORE_DIM,
};

#[cfg(test)]
mod tests;
