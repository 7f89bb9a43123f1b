//! A desk-scale laboratory for measuring how specialized the MLP value
//! vectors of a transformer are to individual pieces of knowledge.
//!
//! The pipeline: generate a synthetic fact corpus with frequency tiers
//! ([`corpus`]), train a small decoder-only transformer from scratch
//! ([`autodiff`], [`model`], [`finetune`]), collect per-concept MLP
//! coefficients, mask the most concept-specific value vectors and score the
//! damage ([`surgery`]), and estimate hallucination with semantic entropy and
//! local intrinsic dimension ([`halluc`]). [`harness`] wires everything into
//! config-driven, reproducible runs.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod finetune;
pub mod halluc;
pub mod harness;
pub mod model;
pub mod stats;
pub mod surgery;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ActivationKind, Tensor};
