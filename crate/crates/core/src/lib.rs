//! Auxiliary-task adaptation for a shared graph encoder.
//!
//! A target task and several self-supervised auxiliary tasks share one
//! encoder. Their gradients on the shared parameters are combined by one of
//! several strategies: similarity gating, norm scaling, projection, learned
//! rotation scalars, or task weights learned by bi-level optimization with
//! implicit hypergradients.

pub mod autodiff;
pub mod bilevel;
pub mod combiners;
pub mod error;
pub mod harness;
pub mod models;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
