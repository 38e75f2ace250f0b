//! Numerical laboratory for multi-fidelity stability of graph representation
//! learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] holds the topology, receptive fields and sparsity statistics.
//! * [`sampler`] draws vertex samples, either independently or from a binary
//!   Gibbs (Ising) family whose Dobrushin coefficient can be enumerated.
//! * [`objective`] provides receptive-field losses with certified smoothness,
//!   convexity and Lipschitz constants.
//! * [`sgd`] runs plain and coupled SGD and checks the contraction properties
//!   of the gradient step.
//! * [`gnn`] implements the one-layer linear equivariant GNN fitted by masked
//!   ridge regression.
//! * [`harness`] estimates type-1/type-2/uniform stability and generalization
//!   gaps by Monte Carlo or exhaustive enumeration.
//! * [`bounds`] evaluates the closed-form stability and generalization bounds.
//! * [`srm`] selects a receptive-field degree by stability-penalized risk.

pub mod bounds;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod objective;
pub mod rng;
pub mod sampler;
pub mod sgd;
pub mod srm;

pub use error::{Error, Result};
pub use graph::{Graph, ReceptiveFieldMap, SparsityStats};
pub use objective::{ConstantsCertificate, Domain, LocalSample, Objective};
pub use sampler::{IsingSpec, SampleSet, VertexSample};
pub use sgd::{CoupledTrace, SgdConfig, Trajectory};
