//! Relation-aware transformer for multi-person 3D motion prediction.
//!
//! A framework-free implementation: dense tensors with reverse-mode
//! autodiff, a two-stream joint/relation model, training with AdamW,
//! evaluation metrics, and a binary checkpoint format. Everything runs
//! on one CPU core with deterministic seeding.

pub mod checkpoint;
pub mod config;
pub mod encoders;
pub mod fusion;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod params;
pub mod relation;
pub mod rng;
pub mod scene;
pub mod trainer;

pub use config::TrainConfig;
pub use model::{Model, ModelError, Prediction, RelTargetSpace, SceneInputs};
pub use numerics::{Graph, NumericsError, Precision, Scalar, Tensor, TensorId};
pub use params::{Init, ModelDims, ModelPar};
pub use scene::{SceneSequence, Skeleton, SplitSpec};
