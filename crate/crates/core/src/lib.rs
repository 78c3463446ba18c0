//! Meta-learned soft-prompt initialization for few-shot prompt classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a tape with graph-retaining gradients, enough for Hessian terms.
//! - [`model`]: the cloze-style prompt classifier (backbone, soft prompts, verbalizer).
//! - [`episodes`]: corpora, label-disjoint splits and N-way K-shot episode sampling.
//! - [`meta`]: MAML, first-order MAML, Reptile and multi-step-loss MAML updates.
//! - [`harness`]: meta-train / meta-test loops and the comparison suite.
//! - [`persist`]: checkpoints, run directories and metric files.

pub mod autodiff;
pub mod episodes;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod meta;
pub mod model;
pub mod oracle;
pub mod persist;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
