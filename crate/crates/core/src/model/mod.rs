//! The sub-interest model: assignment, encoder, projection and fusion.

mod assign;
mod checkpoint;
mod config;
mod encoder;
mod head;
mod params;
mod scorer;

pub use assign::{assign_sequence, assign_sub_interest, pair_recent_negative, SubInterestAssignment};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{BetaReference, ModelConfig, ModelKind, Projection};
pub use encoder::{beta_matrix, encode, encode_backward, EncoderCache};
pub use head::{fuse_backward, fuse_score, project_backward, project_sub_interests, FuseGrads, FusedScore, Fusion, ProjectedInterests};
pub use params::{BlockParams, ModelParams};
pub use scorer::{prepare_input, score_next, ForwardPass, HeadAccumulator, QueryHead};
