//! Training targets, histogram loss and the recurrent scorer.

pub mod histogram;
pub mod io;
pub mod loss;
pub mod rnn;
pub mod targets;
pub mod train;

pub use histogram::{histogram_expectation, histogram_target, normal_cdf, HistogramConfig};
pub use io::{read_features_csv, read_scores_csv, write_features_csv, write_scores_csv, FeatureSequence};
pub use loss::{soft_cross_entropy, softmax};
pub use rnn::{FrameTarget, LossWeights, ScorerDims, ScorerModel};
pub use targets::{progress_target, state_target};
pub use train::{frame_targets, infer_scores, train_scorer, AdamW, ScorerConfig, TrainOutcome};
