//! Boundary-aware temporal action proposals.
//!
//! The pipeline embeds raw frame features with a small encoder trained on
//! anchor/positive/hard-negative triplets, turns each video into a cosine
//! similarity matrix, segments it with exact kernel change-point DP at several
//! granularities, scores the resulting segments as proposals and blends
//! proposal features back into the video-level features. [`eval`] holds the
//! tIoU metrics and [`synthetic`] a generator of videos with planted actions.

pub mod contrastive;
mod error;
pub mod eval;
pub mod format;
pub mod frames;
pub mod proposal;
pub mod sample_pool;
pub mod similarity;
pub mod synthetic;
pub mod tsc;

pub use contrastive::{
    embed_sequence, encode, loss_gradients, train_encoder, triplet_loss, EncoderParams, LossMode, TrainConfig,
    TrainOutcome,
};
pub use error::{Error, Result};
pub use eval::{average_recall, boundary_error, detection_average_precision, temporal_iou, Detection, EvalReport};
pub use frames::{ActionInstance, EmbeddingSequence, FrameFeatureSequence, VideoAnnotation};
pub use proposal::{generate_proposals, refine_features, truncate_features, FeatureSequence, Proposal};
pub use sample_pool::{draw_triplet, label_clips, SamplePools, Triplet};
pub use similarity::{build_similarity_matrix, cosine_similarity, SimilarityMatrix};
pub use synthetic::{generate_dataset, generate_video, SynthConfig, SynthVideo};
pub use tsc::{build_prefix_table, optimal_change_points, segment_cost, PrefixTable, Segmentation};
