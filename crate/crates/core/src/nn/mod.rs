//! Dense MLP classifier with analytic gradients and an SGD training loop.

mod loss;
mod mlp;
mod train;

pub use loss::{argmax, kl_divergence, log_softmax_rows, mean_row_kl, softmax_rows, KL_EPSILON};
pub use mlp::{Dense, Direction, ForwardCache, Gradients, Mlp};
pub use train::{
    accuracy_on, epoch_metrics, mean_loss_on, sgd_epoch, train, EpochMetrics, EvalSets, TrainConfig,
};

pub(crate) use mlp::one_hot;
pub(crate) use train::{check_source, descend_batch, descend_batches};
