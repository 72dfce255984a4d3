//! Numerical laboratory for thermodynamic formalism of one-dimensional maps:
//! topological pressure by independent estimators (iterated preimages,
//! periodic points, transfer-operator spectrum, variational lower bounds),
//! equilibrium and conformal measures, and level-2 large-deviation rate
//! functions checked against exact oracles at desk scale.

pub mod backward;
pub mod cli;
pub mod complexdyn;
pub mod config;
pub mod error;
pub mod ldp;
pub mod maps;
pub mod numerics;
pub mod periodic;
pub mod potentials;
pub mod pressure;
pub mod report;
pub mod transfer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
