//! contact-lab: a simulation and exact-verification laboratory for the
//! contact process on vertex-transitive graphs with finitely many edges
//! added or removed.
//!
//! The crate has three layers:
//!
//! * event-driven simulation of the contact process, either with fresh
//!   per-replica randomness (fast independent runs) or driven by a shared
//!   deterministic graphical construction (couplings, duality, common
//!   random numbers);
//! * an exact finite-state oracle that enumerates the full generator of
//!   small instances and verifies the duality identity, the
//!   generator-decomposition algebra, and the conditioned-pair rate
//!   identity to tight tolerances;
//! * Monte Carlo estimators for survival, expected infected mass, its
//!   time integral, stationary density, and a paired pseudo-critical-value
//!   comparison between a graph and its edge-perturbed variant.
//!
//! The `contact-lab` binary drives everything from a JSON run config; see
//! the README for subcommands and artifact formats.

pub mod checks;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod graph;
pub mod graphical;
pub mod rng;

pub use dynamics::{Configuration, ModelParams};
pub use error::{Error, Result};
pub use graph::{
    apply_perturbation, graph_distance, make_graph, BaseKind, EdgePerturbation, Graph, VertexId,
};
pub use graphical::GraphicalConstruction;
