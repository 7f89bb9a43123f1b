//! Next-token training, resumable optimizer state, and fine-tuning restricted
//! to chosen value vectors.

mod data;
mod train;
mod variants;

pub use data::{Batcher, TrainBatch};
pub use train::{finetune, pretrain, TrainConfig, TrainState, Trainable, Trainer, STATE_MAGIC};
pub use variants::{select_ft_columns, FinetuneVariant, GradientMask, SelectionRanking, VariantKind};
