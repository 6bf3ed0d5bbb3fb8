//! Losses, optimizer, synthetic data and the training loop.

mod data;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use data::{NearestCentroid, Split, ToyConfig, ToyDataset};
pub use gradcheck::{gradcheck, gradcheck_module, GradcheckReport, GradcheckTarget, EPSILON, REL_FLOOR};
pub use loss::{cross_entropy, distillation_kl, kd_loss, KdParams};
pub use optim::{cosine_lr, AdamW, OptimConfig};
pub use trainer::{epoch_batches, evaluate, split_logits, train_loop, EpochRecord, Teacher, TrainTrace};
