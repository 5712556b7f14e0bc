//! Skeleton-based fine-grained action recognition.
//!
//! A spatiotemporal graph-convolutional backbone over human-skeleton clips,
//! extended with a cross-block feature cascade that re-injects shallow
//! features into the classification path. Everything runs on a small f64
//! tensor kernel with tape-based reverse-mode differentiation so analytic
//! gradients can be verified against central differences throughout.
//!
//! Crate map:
//! - [`tensor`], [`autograd`], [`gradcheck`]: the numeric substrate.
//! - [`skeleton`]: body graphs and partitioned normalized adjacency.
//! - [`model`]: backbone blocks, cascade branch, classifier, checkpoints.
//! - [`data`]: clip files, modality derivation, synthetic dataset, batches.
//! - [`train`]: SGD/Nesterov with warmup + cosine schedule, reports.
//! - [`analysis`]: ablation grids and per-joint feature responses.

pub mod analysis;
pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use autograd::{EwiseKind, Graph, Var};
pub use config::{Modality, ModelConfig, OptimConfig, RunConfig, TopologySpec};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use model::{argmax, Model};
pub use skeleton::{build_adjacency, permute_graph, AdjacencyStack, PartitionStrategy, SkeletonGraph};
pub use tensor::Tensor;
