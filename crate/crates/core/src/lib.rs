//! Densities transported by randomly switching drift fields.
//!
//! A finite-state Markov environment selects which drift field currently
//! transports a population density. This crate simulates the resulting
//! density-valued process pathwise (Monte Carlo pullbacks along sampled
//! environment paths), solves the coupled deterministic system for its
//! first moment and second-order correlations with a conservative upwind
//! scheme, and classifies the large-time mean (convergence to an explicit
//! stationary profile versus sweeping) for the built-in bifurcation
//! families.

pub mod asymptotics;
pub mod chain;
pub mod flow;
pub mod fpe;
pub mod matexp;
pub mod model;
pub mod quad;
pub mod transport;
pub mod sparse;
