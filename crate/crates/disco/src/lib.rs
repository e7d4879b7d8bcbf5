//! Facet toolkit for small fully-connected ReLU networks.
//!
//! The input space of a ReLU network splits into convex polytopes ("facets")
//! on which the network is affine. This crate enumerates the feasible facets
//! of a bounded domain with exact rational arithmetic, verifies linear
//! safety properties facet by facet (sound and complete), and compiles the
//! same problems to SMT-LIB 2 (QF_LRA) and big-M MILP text files for
//! external solvers. A small trainer with a margin regularizer produces the
//! networks the rest of the toolkit analyzes.

pub mod affine;
pub mod analysis;
pub mod export;
pub mod facet;
#[doc(hidden)]
pub mod fixtures;
pub mod lp;
pub mod network;
pub mod property;
pub mod rat;
pub mod train;
pub mod verify;

pub use affine::{AffineForm, LinearConstraint, Relation};
pub use facet::{EnumConfig, Facet, FacetSet};
pub use lp::{ConstraintSystem, LpOutcome};
pub use network::{ActivationPattern, Architecture, Layer, Network};
pub use property::VerificationTask;
pub use rat::Rat;
pub use verify::{Verdict, VerdictStatus};

/// Errors surfaced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("dimension mismatch at layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },
    #[error("invalid rational literal: {0}")]
    Rational(String),
    #[error("malformed box: {0}")]
    BadBox(String),
    #[error("empty domain")]
    EmptyDomain,
    #[error("internal consistency: {0}")]
    Internal(String),
    #[error("network/facet digest mismatch: facets were enumerated for a different network")]
    DigestMismatch,
    #[error("unknown architecture name: {0}")]
    UnknownArchitecture(String),
    #[error("unbounded interval for neuron {0}: cannot instantiate big-M row")]
    UnboundedInterval(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
