//! Relational hyperevent models for tripartite publication events
//! (authors × references × keywords).
//!
//! The pipeline is: parse an [`event_model::EventSequence`], build a
//! case/control [`riskset::DesignMatrix`] in one chronological pass over a
//! [`network_state::NetworkState`], then fit the sampled partial likelihood
//! with [`estimator::fit`].

pub mod estimator;
pub mod event_model;
pub mod network_state;
pub mod riskset;
pub mod statistics;
pub mod synthgen;

pub use estimator::{fit, FitResult};
pub use event_model::{EventSequence, HyperEvent, NodeRef, NodeSets, NodeType, Timestamp};
pub use network_state::NetworkState;
pub use riskset::{build_design_matrix, DesignMatrix};
pub use statistics::{compute_effect_vector, EffectCatalog};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
