//! Few-shot meta-learning with orthonormality-constrained parameters.
//!
//! The crate builds up in layers:
//!
//! * [`matrix`] - dense row-major `f64` matrices with deterministic kernels;
//! * [`qr`] - Householder thin QR and the adjoint of its Q factor;
//! * [`graph`] - a tape-based reverse-mode autodiff graph whose gradients
//!   can also be *emitted as graph nodes*, which is what makes exact
//!   second-order meta-gradients a single backward pass;
//! * [`stiefel`] - points and tangent vectors of the Stiefel manifold
//!   (matrices with orthonormal columns), tangent projection, and the QR
//!   retraction;
//! * [`kernel`] - a Gaussian kernel on the manifold and the proximal loss
//!   derived from it;
//! * [`model`] - parameter sets with per-entry manifold tags, checkpointing,
//!   and an MLP whose weights live on the manifold;
//! * [`meta`] - inner-loop adaptation, first- and second-order meta-updates,
//!   and held-out evaluation;
//! * [`tasks`] - deterministic episodic task samplers (synthetic Gaussian
//!   and sinusoid families, folder-of-PGM-images datasets).
//!
//! Everything is deterministic given a seed: task sampling, initialization,
//! and training loops produce bitwise-identical results across reruns.

pub mod error;
pub mod graph;
pub mod kernel;
pub mod matrix;
pub mod meta;
pub mod model;
pub mod qr;
pub mod rng;
pub mod stats;
pub mod stiefel;
pub mod tasks;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId, DEFAULT_NODE_BUDGET};
pub use kernel::{kernel, kernel_loss, kernel_loss_grad, KernelParams};
pub use matrix::Matrix;
pub use meta::{
    evaluate, inner_adapt, meta_step, AdaptTrace, EvalReport, MetaConfig, Method, Order,
};
pub use model::{
    Activation, Head, Mlp, ModelConfig, Orientation, ParamEntry, ParamKind, ParamSet,
    QuadraticModel, Targets, TaskModel,
};
pub use qr::{qr_backward, qr_thin};
pub use stats::{compute_ci95, mean, median};
pub use stiefel::{
    chordal_distance, orthonormality_defect, project_tangent, random_point, random_tangent,
    retract_qr, skew, tangency_defect, StiefelPoint, TangentVector,
    ORTHONORMALITY_TOLERANCE, TANGENCY_TOLERANCE,
};
pub use tasks::{
    load_folder_dataset, sample_folder_task, sample_gaussian_task, sample_sinusoid_task,
    FolderDataset, GaussianFamily, Split, SplitSpec, Task, TaskFamily, TaskInfo,
};
