//! Behavior-based detection of biased users in online social networks.
//!
//! The pipeline scores every post with a lexicon scorer, sums the scores into
//! a per-user attitude, labels users whose attitude falls outside `μ ± kσ` as
//! overly positive or overly negative, and then trains a small multilayer
//! perceptron (sigmoid units, sum-of-squared-errors loss, rprop+) that predicts
//! that label from behavioral counters alone: review count, lifespan, friend
//! count and follower count.
//!
//! Modules follow the data flow:
//!
//! * [`ingest`] streams JSON-lines / CSV files into [`ingest::RawPost`] and
//!   [`ingest::UserRecord`] through a configurable [`ingest::FieldMap`].
//! * [`sentiment`] is the deterministic lexicon scorer.
//! * [`attitude`] aggregates scores and applies the bias rule.
//! * [`features`] builds and normalizes feature vectors and computes
//!   Pearson / Spearman correlation matrices.
//! * [`mlp`] is the network, its gradient, and rprop+ training.
//! * [`eval`] holds contingency matrices, accuracy and generalized weights.
//! * [`synth`] generates seeded populations with planted signal.
//! * [`pipeline`] wires the stages together from a single config file.

pub mod attitude;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod mlp;
pub mod pipeline;
pub mod sentiment;
pub mod synth;

pub use attitude::{AttitudeMode, AttitudeRecord, Bias, DistributionStats, Polarity};
pub use error::{Error, Result};
pub use eval::ContingencyMatrix;
pub use features::{CorrelationMatrix, CorrelationMethod, FeatureVector, Subset};
pub use ingest::{FieldMap, RawPost, UserRecord};
pub use mlp::{Network, TrainConfig, TrainHistory};
pub use sentiment::{Lexicon, SentimentScore};
