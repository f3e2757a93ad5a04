//! Self-contained neural-network library built around a multidimensional
//! interactive attention block: joint channel-spatial recalibration with
//! reverse-mode differentiation, tiny trainable backbones, losses, metrics,
//! an Adam + cosine-annealing training loop, and a finite-difference
//! verification harness. Everything runs on CPU at desk scale with no
//! external numeric dependencies.

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod data;
pub mod error;
pub mod metrics;
mod ops;
pub mod pgm;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use attention::{AttentionMaps, MiaBlock};
pub use autograd::{grad_check, GradCheckReport, Gradients, Graph, NodeId};
pub use backbone::{build_mini_cnn, build_mini_flows, build_mini_segnet, Model, Variant};
pub use data::{load_cifar10, load_flows_csv, save_checkpoint, synth_blobs, synth_masks, Dataset};
pub use metrics::MetricReport;
pub use train::{cosine_lr, train_loop, LossKind, TrainConfig};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{broadcast_mul, reduce_mean, Shape, Tensor};
