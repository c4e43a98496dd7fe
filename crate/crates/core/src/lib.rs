//! Factored back-off language models.
//!
//! A model is organised as a *backing-off lattice*: a DAG whose nodes are
//! projections of one joint event schema and whose edges are factorization
//! manners. Queries that are unseen at a node are answered by a weighted
//! mixture of the node's factored children, scaled by a Katz-style α so that
//! every conditional distribution stays normalized.
//!
//! The numeric core is generic over the floating point type ([`Scalar`]);
//! [`Model64`] and [`Model32`] are the concrete instantiations.

pub mod backoff;
pub mod counts;
pub mod error;
pub mod estimation;
pub mod events;
pub mod lattice;
pub mod mixture;
pub mod persist;
mod scalar;
pub mod tasks;

pub use backoff::{AlphaKind, AlphaValue, Branch, Model, ModelConfig, Trace};
pub use counts::{ingest, CountOfCounts, CountTable, Observation};
pub use error::{Error, Result};
pub use estimation::{discounted_prob, good_turing_discounts, mle, DiscountTable};
pub use events::{
    apply_factorization, ConditionalQuery, Event, EventSchema, ProjectionSpec, SlotId, SlotSet,
    Term,
};
pub use lattice::{validate, EdgeId, FactorizationEdge, Lattice, LatticeNode, NodeId};
pub use mixture::{CombineMode, EmOptions, HeldOutSet, MixtureWeights};
pub use scalar::Scalar;

/// Model over `f64` probabilities; the default used by the command line.
pub type Model64 = Model<f64>;
/// Model over `f32` probabilities.
pub type Model32 = Model<f32>;
/// Discount table over `f64`.
pub type DiscountTable64 = DiscountTable<f64>;
/// Mixture weights over `f64`.
pub type MixtureWeights64 = MixtureWeights<f64>;
