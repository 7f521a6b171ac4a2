//! Sparse-to-sparse training of toy diffusion models.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`tensor`] / [`autodiff`]: dense `f64` tensors with a reverse-mode tape;
//! - [`topology`]: ER/ERK density allocation, masks, magnitude pruning and
//!   gradient or random regrowth;
//! - [`diffusion`]: linear noise schedules, forward noising, the
//!   noise-prediction loss and DDIM sampling;
//! - [`models`]: MLP and conv denoisers with mask-aware registries;
//! - [`training`]: masked AdamW and the Dense / Static / RigL / MagRan loops;
//! - [`metrics`]: parameter and FLOPs accounting, Fréchet distance and KID;
//! - [`experiments`]: configs, synthetic datasets, checkpoints, sweeps and
//!   run records.

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
