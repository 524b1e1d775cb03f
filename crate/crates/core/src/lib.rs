//! State-dependent (max-dissent) gossip averaging and consensus-based
//! distributed subgradient optimization.
//!
//! - [`graph`]: communication topologies and their diameters.
//! - [`netstate`]: the agent state matrix, Lyapunov function, max-edge and
//!   max-dissent neighbor selection.
//! - [`mixing`]: one round of Randomized Gossip, Local Max-Gossip, Global
//!   Max-Gossip or Load-Balancing, with bit accounting.
//! - [`problems`]: local objectives and their subgradients.
//! - [`optimizer`]: the two-phase mix-then-descend iteration.
//! - [`theory`]: contraction factors, rate constants and envelopes.
//! - [`metrics`]: per-iteration records and CSV output.

pub mod graph;
pub mod metrics;
pub mod mixing;
pub mod netstate;
pub mod optimizer;
pub mod problems;
pub mod theory;

pub use graph::{make_graph, Edge, Graph, GraphError, GraphKind};
pub use mixing::{ActivationSource, BitCosts, MixEvent, Mixer, SchemeKind, SchemeSpec, Scripted};
pub use netstate::StateMatrix;
pub use optimizer::{run, run_with, Snapshots, StepSizeSchedule, Trajectory};
pub use problems::ProblemSpec;
pub use theory::ContractionReport;
