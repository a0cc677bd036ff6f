//! Similarity labels, training objectives, the optimizer and the training
//! loop, plus embedding-spread diagnostics.

pub mod loss;
pub mod mining;
pub mod optim;
pub mod similarity;
pub mod spread;
pub mod train;

pub use loss::{contrastive_loss, intent_loss, reconstruction_loss, total_loss, BatchItem, LossBreakdown, LossWeights};
pub use mining::{mine_pairs, scheduled, PairLabels};
pub use optim::{AdamW, AdamWConfig};
pub use similarity::{multilevel_similarity, similarity_matrix, summary_similarity, GraphSummary, SimilarityWeights};
pub use spread::{embedding_spread, group_means, SpreadReport};
pub use train::{train, train_with, EpochLog, TrainConfig, TrainError, TrainOutcome, TrainingSample};
