//! Continual transfer learning for cross-domain click-through-rate prediction.
//!
//! A frozen copy of the (continually retrained) source-domain model runs next to the
//! target-domain model; per-layer adapters add projected source activations into the
//! target tower. Everything, including backpropagation, is implemented by hand on a
//! small deterministic dense kernel.

pub mod continual;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numkern;
pub mod seqmodel;

pub use error::KernelError;
