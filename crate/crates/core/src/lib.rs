//! Union pre-training versus MAML on synthetic few-shot benchmarks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds parameter vectors, small MLPs and reverse-mode
//!   gradients, including gradients through unrolled inner loops.
//! * [`tasks`] generates Gaussian class-conditional sources, benchmarks
//!   with global labels, and n-way k-shot episodes.
//! * [`learners`] trains and evaluates union pre-training and
//!   first/higher-order MAML.
//! * [`task2vec`] embeds tasks by the diagonal Fisher information of a
//!   probe network and measures benchmark diversity.
//! * [`stats`] holds effect sizes, the 1% decision rule, confidence
//!   interval rules and summaries.
//! * [`harness`] ties everything into configurable, persisted runs and
//!   reports.

pub mod error;
pub mod harness;
pub mod learners;
pub mod rng;
pub mod stats;
pub mod task2vec;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
