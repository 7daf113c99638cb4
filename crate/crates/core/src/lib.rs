//! Simulator and analysis toolkit for qubit networks evolving under
//! excitation-number-preserving two-qubit circuits.

pub mod analysis;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod graphs;
pub mod maps;
pub mod measures;
pub mod rules;
pub mod symstate;

pub use error::{Error, Result};
pub use graphs::{
    BernoulliScheme, CouplingGraph, CouplingKind, EmergentNetwork, InteractionGraph, MatchingCatalog,
};
pub use symstate::{BlochZVector, GateParams, NetworkSpec, PairReduced, SymmetricState, TwoQubitSummary};
