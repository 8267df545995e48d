//! Null-space constrained low-rank adapters for small dense networks, with
//! covariance capture, covariance-weighted truncation analysis, knowledge
//! augmentation for instruction data, and open-domain QA metrics.

pub mod adapter;
pub mod augment;
pub mod cosvd;
pub mod covariance;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod trainer;

pub use adapter::{AdapterPair, NullBasis, Projector, TheoremReport};
pub use covariance::CovAccumulator;
pub use error::{KoreError, Result};
pub use linalg::{Matrix, SvdResult};
pub use model::{Activation, GradientSet, LinearLayer, Loss, ToyModel};
pub use trainer::{Example, TrainConfig, TrainHistory};
pub use augment::{AugmentedSample, GenClient, KnowledgeItem, Quadruplet};
pub use cosvd::{Method, TruncationResult};
pub use eval::{MetricResult, Normalization};
