//! Opinion dynamics on directed weighted trust networks.
//!
//! Two models share one network representation:
//!
//! * **Trust averaging** ([`degroot`]): opinions are real numbers and each
//!   step replaces them with trust-weighted neighbor averages. With a
//!   stubborn agent the ordinary block contracts geometrically to the
//!   stubborn opinion, and the limit has the closed form
//!   `(I - Q)^{-1} r * x_0[0]`.
//! * **Random actions** ([`ra_sim`]): opinions are action probabilities;
//!   agents play Bernoulli actions and probabilities relax toward the
//!   trust-weighted average of the played actions. With a stubborn (or
//!   drifting) agent the population herds, in probability, to its action.
//!
//! [`graph`] builds and validates the networks, [`spectral`] supplies the
//! Perron data and resolvent limits that both models lean on, and
//! [`diagnostics`] turns the convergence arguments themselves (contraction
//! identity, conditional variance, tail concentration, layered herding, and
//! the oscillating counterexample) into executable checks.

pub mod degroot;
pub mod diagnostics;
pub mod graph;
pub mod ra_sim;
pub mod spectral;

pub use degroot::{degroot_limit, degroot_run, degroot_step, DegrootError, DegrootRun, OpinionState};
pub use graph::{check_irreducible, partition, GraphError, PartitionedTrust, TrustMatrix};
pub use ra_sim::{
    draw_actions, ra_step, run_batch, run_batch_traces, run_replica, AgentRoleSpec, BatchSummary,
    DriftLaw, InitSpec, ReplicaTrace, RoleKind, SimConfig, SimError,
};
pub use spectral::{
    neumann_limit, neumann_truncated, spectral_radius_perron, verify_rowsum_contraction,
    SpectralData, SpectralError,
};
